#include <doctest.h>

#include <cmath>

#include "made/errors.hpp"
#include "made/losses.hpp"
#include "made/rng.hpp"
#include "oracles.hpp"

using namespace made;

namespace {

Mat random_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = scale * standard_normal(rng);
  }
  return m;
}

Vec random_vec(int n, Rng& rng) { return random_mat(n, 1, rng).col(0); }

double loop_sq_dist(const Vec& a, const Vec& b) {
  double s = 0;
  for (int i = 0; i < a.size(); ++i) s += (a(i) - b(i)) * (a(i) - b(i));
  return s;
}

// Random orthogonal matrix from a QR decomposition.
Mat random_rotation(int n, Rng& rng) {
  Eigen::HouseholderQR<Mat> qr(random_mat(n, n, rng));
  return qr.householderQ();
}

// Central differences of f at every entry of x.
template <class F>
Mat numeric_grad(Mat x, F f, double h = 1e-6) {
  Mat g(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      const double v = x(i, j);
      x(i, j) = v + h;
      const double up = f(x);
      x(i, j) = v - h;
      const double down = f(x);
      x(i, j) = v;
      g(i, j) = (up - down) / (2 * h);
    }
  }
  return g;
}

double rel_err(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(a.norm() + b.norm(), 1e-12); }

const std::vector<int> kPk = {0, 0, 0, 0, 1, 1, 1, 1};

}  // namespace

TEST_CASE("uniform logits over five classes give ln 5") {
  const Mat logits = Mat::Constant(3, 5, 0.7);
  CHECK(id_loss(logits, {0, 2, 4}) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(id_loss(logits, {0, 2, 4}) == doctest::Approx(1.6094).epsilon(1e-4));
}

TEST_CASE("id loss vanishes as the true logit grows") {
  double prev = 1e9;
  for (double big : {1.0, 10.0, 100.0, 1000.0}) {
    Mat logits = Mat::Zero(1, 5);
    logits(0, 3) = big;
    const double l = id_loss(logits, {3});
    CHECK(l >= 0.0);
    CHECK(l <= prev);
    prev = l;
  }
  CHECK(prev < 1e-12);
}

TEST_CASE("id loss matches direct softmax summation") {
  Rng rng = make_rng(4, "id");
  for (int trial = 0; trial < 20; ++trial) {
    const Mat logits = random_mat(8, 6, rng, 2.0);
    std::vector<int> labels;
    for (int i = 0; i < 8; ++i) labels.push_back(static_cast<int>(uniform_index(rng, 6)));
    CHECK(std::abs(id_loss(logits, labels) - oracle::softmax_ce(logits, labels)) < 1e-10);
  }
}

TEST_CASE("id loss is shift invariant per sample") {
  Rng rng = make_rng(5, "shift");
  Mat logits = random_mat(4, 7, rng);
  const std::vector<int> labels = {1, 6, 0, 3};
  const double base = id_loss(logits, labels);
  for (int i = 0; i < 4; ++i) logits.row(i).array() += 100.0 * (i + 1);
  CHECK(id_loss(logits, labels) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("id loss argument errors") {
  const Mat logits = Mat::Zero(2, 3);
  CHECK_THROWS_AS(id_loss(logits, {0, 3}), ArgumentError);
  CHECK_THROWS_AS(id_loss(logits, {0, -1}), ArgumentError);
  CHECK_THROWS_AS(id_loss(logits, {0}), ArgumentError);
  CHECK_THROWS_AS(id_loss(Mat::Zero(0, 3), {}), ArgumentError);
}

TEST_CASE("id loss gradient matches finite differences") {
  Rng rng = make_rng(6, "idg");
  const Mat logits = random_mat(8, 5, rng);
  const std::vector<int> labels = {0, 1, 2, 3, 4, 0, 1, 2};
  Mat d;
  id_loss(logits, labels, &d);
  const Mat n = numeric_grad(logits, [&](const Mat& x) { return id_loss(x, labels); });
  CHECK(rel_err(d, n) < 1e-4);
}

TEST_CASE("triplet loss examples") {
  const double m = 0.3;
  Vec a = Vec::Zero(4), p = Vec::Zero(4), n = Vec::Zero(4);
  n(0) = std::sqrt(m + 1.0);
  CHECK(triplet_loss(a, p, n, m) == 0.0);
  CHECK(triplet_loss(a, a, a, m) == doctest::Approx(m));
  CHECK(triplet_loss(a, a, a, 0.0) == 0.0);
}

TEST_CASE("triplet loss matches the scalar formula") {
  Rng rng = make_rng(7, "tri");
  for (int t = 0; t < 100; ++t) {
    const Vec a = random_vec(16, rng), p = random_vec(16, rng), n = random_vec(16, rng);
    const double m = uniform01(rng);
    const double expect = std::max(0.0, m + loop_sq_dist(a, p) - loop_sq_dist(a, n));
    CHECK(triplet_loss(a, p, n, m) == doctest::Approx(expect).epsilon(1e-13));
    CHECK(triplet_loss(a, p, n, m) >= 0.0);
  }
}

TEST_CASE("triplet loss is invariant to a common rotation and translation") {
  Rng rng = make_rng(8, "rot");
  const Mat R = random_rotation(16, rng);
  const Vec shift = random_vec(16, rng);
  for (int t = 0; t < 20; ++t) {
    const Vec a = random_vec(16, rng), p = random_vec(16, rng), n = random_vec(16, rng);
    const double before = triplet_loss(a, p, n, 2.0);
    const double after = triplet_loss(R * a + shift, R * p + shift, R * n + shift, 2.0);
    CHECK(after == doctest::Approx(before).epsilon(1e-10));
  }
}

TEST_CASE("batch-hard triplet degenerate cases") {
  CHECK(batch_hard_triplet(Mat::Constant(8, 5, 0.4), kPk, 0.3) == doctest::Approx(0.3));
  Mat clusters = Mat::Zero(8, 3);
  clusters.bottomRows(4).col(1).setConstant(1.0);  // squared distance 1 > margin
  CHECK(batch_hard_triplet(clusters, kPk, 0.3) == 0.0);
}

TEST_CASE("batch-hard mining equals the exhaustive oracle") {
  Rng rng = make_rng(9, "bh");
  for (int t = 0; t < 200; ++t) {
    const Mat f = random_mat(8, 6, rng);
    const double m = 2.0 * uniform01(rng);
    CHECK(batch_hard_triplet(f, kPk, m) == doctest::Approx(oracle::exhaustive_batch_hard(f, kPk, m)).epsilon(1e-12));
  }
  const std::vector<int> three = {2, 5, 9, 2, 5, 9, 9};
  for (int t = 0; t < 50; ++t) {
    const Mat f = random_mat(7, 4, rng);
    CHECK(batch_hard_triplet(f, three, 0.3) == doctest::Approx(oracle::exhaustive_batch_hard(f, three, 0.3)).epsilon(1e-12));
  }
}

TEST_CASE("mined triplets respect labels and extremality") {
  Rng rng = make_rng(10, "mine");
  const Mat f = random_mat(8, 3, rng);
  const auto triplets = mine_batch_hard(f, kPk);
  REQUIRE(triplets.size() == 8);
  const Mat d = pairwise_sq_distances(f);
  for (const auto& t : triplets) {
    CHECK(kPk[t.positive] == kPk[t.anchor]);
    CHECK(t.positive != t.anchor);
    CHECK(kPk[t.negative] != kPk[t.anchor]);
    for (int j = 0; j < 8; ++j) {
      if (j != t.anchor && kPk[j] == kPk[t.anchor]) CHECK(d(t.anchor, j) <= d(t.anchor, t.positive));
      if (kPk[j] != kPk[t.anchor]) CHECK(d(t.anchor, j) >= d(t.anchor, t.negative));
    }
  }
}

TEST_CASE("pairwise distances are squared Euclidean") {
  Rng rng = make_rng(11, "pd");
  const Mat f = random_mat(5, 7, rng);
  const Mat d = pairwise_sq_distances(f);
  for (int i = 0; i < 5; ++i) {
    CHECK(d(i, i) == doctest::Approx(0.0));
    for (int j = 0; j < 5; ++j) {
      CHECK(d(i, j) == doctest::Approx(loop_sq_dist(f.row(i).transpose(), f.row(j).transpose())).epsilon(1e-12));
    }
  }
}

TEST_CASE("a lone identity is a mining error naming it") {
  const Mat f = Mat::Zero(5, 2);
  try {
    batch_hard_triplet(f, {0, 0, 7, 1, 1}, 0.3);
    FAIL("expected MiningError");
  } catch (const MiningError& e) {
    CHECK(std::string(e.what()).find('7') != std::string::npos);
  }
  CHECK_THROWS_AS(mine_batch_hard(Mat::Zero(2, 2), {0, 0}), MiningError);  // no negatives
}

TEST_CASE("batch-hard gradient matches finite differences") {
  Rng rng = make_rng(12, "bhg");
  for (int t = 0; t < 5; ++t) {
    const Mat f = random_mat(8, 4, rng);
    Mat d;
    batch_hard_triplet(f, kPk, 1.5, &d);
    const Mat n = numeric_grad(f, [&](const Mat& x) { return batch_hard_triplet(x, kPk, 1.5); });
    CHECK(rel_err(d, n) < 1e-4);
  }
}

TEST_CASE("weighted total loss") {
  Rng rng = make_rng(13, "tot");
  const Mat logits = random_mat(8, 2, rng);
  const Mat f = random_mat(8, 4, rng);
  const double id = id_loss(logits, kPk);
  const double tri = batch_hard_triplet(f, kPk, 0.3);

  LossConfig c;
  c.lambda_tri = 0.0;
  auto b = total_loss(logits, f, kPk, c);
  CHECK(b.total == doctest::Approx(id).epsilon(1e-14));
  CHECK(b.triplet == doctest::Approx(tri).epsilon(1e-14));

  c = LossConfig{};
  CHECK(c.lambda_id == 1.0);
  CHECK(c.lambda_tri == 1.0);
  CHECK(c.margin == 0.3);
  b = total_loss(logits, f, kPk, c);
  CHECK(b.total == doctest::Approx(id + tri).epsilon(1e-14));
  CHECK(b.total >= 0.0);

  c.lambda_id = 0.0;
  c.lambda_tri = 0.0;
  Mat dl, df;
  b = total_loss(logits, f, kPk, c, &dl, &df);
  CHECK(b.total == 0.0);
  CHECK(dl.norm() == 0.0);
  CHECK(df.norm() == 0.0);

  c.lambda_id = 0.5;
  c.lambda_tri = 2.0;
  b = total_loss(logits, f, kPk, c, &dl, &df);
  CHECK(b.total == doctest::Approx(0.5 * id + 2.0 * tri).epsilon(1e-14));
  const Mat nl = numeric_grad(logits, [&](const Mat& x) { return total_loss(x, f, kPk, c).total; });
  const Mat nf = numeric_grad(f, [&](const Mat& x) { return total_loss(logits, x, kPk, c).total; });
  CHECK(rel_err(dl, nl) < 1e-4);
  CHECK(rel_err(df, nf) < 1e-4);
}

TEST_CASE("loss config validation") {
  LossConfig c;
  c.margin = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = LossConfig{};
  c.lambda_id = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = LossConfig{};
  CHECK_NOTHROW(c.validate());
}
