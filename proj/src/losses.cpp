#include "made/losses.hpp"

#include <cmath>
#include <map>

#include "made/errors.hpp"

namespace made {

void LossConfig::validate() const {
  if (!(lambda_id >= 0.0) || !(lambda_tri >= 0.0)) throw ConfigError("loss weights must be >= 0");
  if (!(margin >= 0.0)) throw ConfigError("triplet margin must be >= 0");
}

double id_loss(const Mat& logits, const std::vector<int>& labels, Mat* d_logits) {
  const auto B = logits.rows();
  if (B == 0) throw ArgumentError("id_loss on an empty batch");
  if (static_cast<std::size_t>(B) != labels.size()) throw ArgumentError("logits/labels size mismatch");
  const auto C = logits.cols();
  if (d_logits) *d_logits = Mat::Zero(B, C);
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= C) {
      throw ArgumentError("label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
    }
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
    const double z = e.sum();
    total += -(logits(i, y) - m - std::log(z));
    if (d_logits) {
      d_logits->row(i) = e / z;
      (*d_logits)(i, y) -= 1.0;
    }
  }
  if (d_logits) *d_logits /= static_cast<double>(B);
  return total / static_cast<double>(B);
}

double triplet_loss(const Vec& a, const Vec& p, const Vec& n, double margin) {
  if (a.size() != p.size() || a.size() != n.size()) throw ShapeError("triplet vectors differ in size");
  return std::max(0.0, margin + (a - p).squaredNorm() - (a - n).squaredNorm());
}

Mat pairwise_sq_distances(const Mat& f) {
  const auto B = f.rows();
  Mat d(B, B);
  for (Eigen::Index i = 0; i < B; ++i) {
    for (Eigen::Index j = 0; j < B; ++j) d(i, j) = (f.row(i) - f.row(j)).squaredNorm();
  }
  return d;
}

std::vector<MinedTriplet> mine_batch_hard(const Mat& features, const std::vector<int>& labels) {
  const auto B = static_cast<int>(features.rows());
  if (static_cast<std::size_t>(B) != labels.size()) throw ArgumentError("features/labels size mismatch");
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  for (const auto& [l, n] : counts) {
    if (n < 2) throw MiningError("identity " + std::to_string(l) + " has a single sample in the batch");
  }
  if (counts.size() < 2) throw MiningError("batch-hard mining needs at least two identities");

  const Mat d = pairwise_sq_distances(features);
  std::vector<MinedTriplet> out;
  out.reserve(static_cast<std::size_t>(B));
  for (int i = 0; i < B; ++i) {
    int pos = -1, neg = -1;
    for (int j = 0; j < B; ++j) {
      if (j == i) continue;
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
        if (pos < 0 || d(i, j) > d(i, pos)) pos = j;
      } else if (neg < 0 || d(i, j) < d(i, neg)) {
        neg = j;
      }
    }
    out.push_back({i, pos, neg});
  }
  return out;
}

double batch_hard_triplet(const Mat& features, const std::vector<int>& labels, double margin, Mat* d_features) {
  const auto triplets = mine_batch_hard(features, labels);
  const auto B = static_cast<double>(triplets.size());
  if (d_features) *d_features = Mat::Zero(features.rows(), features.cols());
  double total = 0.0;
  for (const auto& t : triplets) {
    const auto a = features.row(t.anchor);
    const auto p = features.row(t.positive);
    const auto n = features.row(t.negative);
    const double v = margin + (a - p).squaredNorm() - (a - n).squaredNorm();
    if (v <= 0.0) continue;
    total += v;
    if (d_features) {
      d_features->row(t.anchor) += 2.0 * (n - p) / B;
      d_features->row(t.positive) += -2.0 * (a - p) / B;
      d_features->row(t.negative) += 2.0 * (a - n) / B;
    }
  }
  return total / B;
}

LossBreakdown total_loss(const Mat& logits, const Mat& features, const std::vector<int>& labels,
                         const LossConfig& config, Mat* d_logits, Mat* d_features) {
  config.validate();
  LossBreakdown r;
  r.id = id_loss(logits, labels, d_logits);
  r.triplet = batch_hard_triplet(features, labels, config.margin, d_features);
  r.total = config.lambda_id * r.id + config.lambda_tri * r.triplet;
  if (d_logits) *d_logits *= config.lambda_id;
  if (d_features) *d_features *= config.lambda_tri;
  return r;
}

}  // namespace made
