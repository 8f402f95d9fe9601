#include <doctest.h>

#include <cmath>

#include "made/attribute_schema.hpp"
#include "made/dem.hpp"
#include "made/errors.hpp"
#include "made/model.hpp"
#include "made/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace made;
using testsupport::random_image;
using testsupport::tiny_config;

namespace {

struct TinyBatch {
  std::vector<Mat> patches;
  std::vector<Vec> descriptions;
  std::vector<int> labels;
};

TinyBatch tiny_batch(const ModelConfig& cfg, std::uint64_t seed, bool null_last = false) {
  Rng rng = make_rng(seed, "batch");
  TinyBatch b;
  for (int i = 0; i < 4; ++i) {
    b.patches.push_back(image_patches(random_image(cfg.height, cfg.width, rng), cfg));
    Vec d(cfg.vocab_size);
    for (int j = 0; j < cfg.vocab_size; ++j) d[j] = coin(rng) ? 1.0 : 0.0;
    b.descriptions.push_back(null_last && i == 3 ? Vec() : d);
    b.labels.push_back(i / 2);
  }
  return b;
}

ModelConfig toy_with_classes() {
  auto c = ModelConfig::toy();
  c.vocab_size = 105;
  c.num_classes = 5;
  return c;
}

}  // namespace

TEST_CASE("sequence lengths follow the patch arithmetic") {
  auto toy = ModelConfig::toy();
  CHECK(toy.num_patches() == 16);
  CHECK(toy.stage1_length() == 17);
  CHECK(toy.fusion_length() == 18);
  auto paper = ModelConfig::paper();
  CHECK(paper.num_patches() == 196);
  CHECK(paper.stage1_length() == 197);
  CHECK(paper.stage_layers == std::array<int, 3>{10, 10, 4});
  toy.use_description = false;
  CHECK(toy.fusion_length() == 17);
}

TEST_CASE("config validation") {
  auto c = ModelConfig::toy();
  c.patch_size = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::toy();
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::toy();
  c.stage_layers = {2, 0, 1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::toy();
  c.desc_tokens = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forward shapes on the toy preset") {
  const auto cfg = toy_with_classes();
  const auto params = init_params(cfg, 1);
  Rng rng = make_rng(2, "img");
  const auto img = random_image(32, 32, rng);
  const auto out = forward(img, testsupport::random_vector(105, rng), params, cfg);
  CHECK(out.logits.size() == 5);
  CHECK(out.fused.size() == 16);
  CHECK(out.f_cls_v.size() == 16);
  CHECK(out.stage1_length == 17);
  CHECK(out.fusion_length == 18);
  CHECK(out.logits.allFinite());

  const auto again = forward(img, std::nullopt, params, cfg);
  const auto again2 = forward(img, std::nullopt, params, cfg);
  CHECK(again.fused == again2.fused);
  CHECK(again.logits == again2.logits);
}

TEST_CASE("patchify shape errors and one-patch locality") {
  const auto cfg = toy_with_classes();
  const auto params = init_params(cfg, 3);
  CHECK_THROWS_AS(patchify(Image(16, 32), params, cfg), ShapeError);

  Rng rng = make_rng(4, "img");
  auto a = random_image(32, 32, rng);
  auto b = a;
  // Patch (row 1, col 2) covers rows 8..15, cols 16..23.
  for (int y = 8; y < 16; ++y)
    for (int x = 16; x < 24; ++x) b.at(y, x, 1) = static_cast<std::uint8_t>(255 - b.at(y, x, 1));
  const Mat ta = patchify(a, params, cfg);
  const Mat tb = patchify(b, params, cfg);
  REQUIRE(ta.rows() == 17);
  const int changed_patch = 1 * 4 + 2;
  for (int t = 0; t < 17; ++t) {
    if (t == 1 + changed_patch) {
      CHECK(ta.row(t) != tb.row(t));
    } else {
      CHECK(ta.row(t) == tb.row(t));
    }
  }
}

TEST_CASE("residual identity with zeroed output projections") {
  const auto cfg = toy_with_classes();
  auto params = init_params(cfg, 5);
  zero_residual_branches(params);
  Rng rng = make_rng(6, "img");
  const Mat tokens = patchify(random_image(32, 32, rng), params, cfg);
  const auto s1 = stage1(tokens, params, cfg);
  CHECK((s1.tokens - tokens).cwiseAbs().maxCoeff() == 0.0);

  const Mat desc = project_description(testsupport::random_vector(105, rng), params, cfg);
  const auto fused = fuse_stages(s1.tokens.bottomRows(16), desc, params, cfg);
  const Vec expected = (params.des_token.row(0) + params.fusion_pos.row(0)).transpose();
  CHECK((fused.f_des_2 - expected).cwiseAbs().maxCoeff() == 0.0);
  CHECK((fused.f_des_3 - expected).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fused.sequence_length == 18);
}

TEST_CASE("stage 1 class token is invariant to permuting patches with their positions") {
  auto cfg = toy_with_classes();
  cfg.stage_layers = {2, 1, 1};
  auto params = init_params(cfg, 7);
  Rng rng = make_rng(8, "img");
  const auto img = random_image(32, 32, rng);
  const Mat tokens = patchify(img, params, cfg);
  Mat swapped = tokens;
  swapped.row(3) = tokens.row(9);
  swapped.row(9) = tokens.row(3);
  const auto a = stage1(tokens, params, cfg);
  const auto b = stage1(swapped, params, cfg);
  CHECK((a.f_cls_v - b.f_cls_v).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.tokens.row(3) - b.tokens.row(9)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("description projection is linear and sensitive") {
  const auto cfg = toy_with_classes();
  auto params = init_params(cfg, 9);
  Rng rng = make_rng(10, "desc");
  const auto m1 = testsupport::random_vector(105, rng);
  const auto m2 = testsupport::random_vector(105, rng);
  const Mat p1 = project_description(m1, params, cfg);
  CHECK(p1.rows() == 1);
  CHECK(p1.cols() == 16);

  params.desc_proj.bias.setZero();
  CHECK(project_description(AttributeVector(105), params, cfg).cwiseAbs().maxCoeff() == 0.0);
  Vec v1(105), v2(105);
  for (int i = 0; i < 105; ++i) {
    v1[i] = m1[i];
    v2[i] = m2[i];
  }
  const Mat sum = project_description(Vec(v1 + v2), params, cfg);
  const Mat parts = project_description(v1, params, cfg) + project_description(v2, params, cfg);
  CHECK((sum - parts).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(project_description(AttributeVector(104), params, cfg), ShapeError);

  // One flipped bit reaches f_des_2.
  const auto fresh = init_params(cfg, 9);
  Image img = random_image(32, 32, rng);
  auto m3 = m1;
  m3.set(17, !m1[17]);
  const auto o1 = forward(img, m1, fresh, cfg);
  const auto o3 = forward(img, m3, fresh, cfg);
  CHECK((o1.f_des_2 - o3.f_des_2).norm() > 1e-9);
  CHECK(o1.f_cls_v == o3.f_cls_v);
}

TEST_CASE("K description tokens") {
  auto cfg = toy_with_classes();
  cfg.desc_tokens = 3;
  const auto params = init_params(cfg, 11);
  CHECK(params.desc_proj.weight.cols() == 48);
  CHECK(project_description(AttributeVector(105), params, cfg).rows() == 3);
  CHECK(cfg.fusion_length() == 20);
  Rng rng = make_rng(12, "img");
  CHECK(forward(random_image(32, 32, rng), std::nullopt, params, cfg).fusion_length == 20);
}

TEST_CASE("aggregation kernel") {
  const auto cfg = toy_with_classes();
  auto params = init_params(cfg, 13);
  Rng rng = make_rng(14, "agg");
  Vec a = Vec::Random(16), b = Vec::Random(16), c = Vec::Random(16);
  auto layer_norm = [](const Vec& x) {
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    return Vec((x.array() - mean) / std::sqrt(var + 1e-5));
  };
  params.agg_bias.setZero();
  params.agg_weight << 1, 0, 0;
  CHECK((aggregate(a, b, c, params) - layer_norm(a)).cwiseAbs().maxCoeff() < 1e-9);
  params.agg_weight << 1.0 / 3, 1.0 / 3, 1.0 / 3;
  CHECK((aggregate(a, b, c, params) - layer_norm((a + b + c) / 3)).cwiseAbs().maxCoeff() < 1e-9);
  params.agg_weight << 0.2, 0.5, 0.3;
  CHECK((aggregate(a, b, c, params) - aggregate(a, c, b, params)).norm() > 1e-6);
}

TEST_CASE("inference embedding ignores descriptions and is unit norm") {
  const auto cfg = toy_with_classes();
  const auto params = init_params(cfg, 15);
  Rng rng = make_rng(16, "img");
  const auto img = random_image(32, 32, rng);
  const Vec e1 = embed_inference(img, params, cfg);
  const Vec e2 = embed_inference(img, params, cfg);
  CHECK(e1 == e2);
  CHECK(std::abs(e1.norm() - 1.0) < 1e-6);
  const auto zero_desc = forward(img, AttributeVector(105), params, cfg);
  CHECK((zero_desc.fused.normalized() - e1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cloth bits never reach the model under full masking") {
  const auto vocab = default_vocabulary();
  const auto cfg = toy_with_classes();
  const auto params = init_params(cfg, 17);
  Rng rng = make_rng(18, "cloth");
  const auto img = random_image(32, 32, rng);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = testsupport::random_vector(105, rng);
    auto b = a;
    for (auto i : cloth_indices(vocab)) b.set(i, coin(rng));
    Rng r1 = make_rng(trial, "n"), r2 = make_rng(trial, "n");
    const auto ma = inject_noise(mask_cloth(a, vocab, 1.0, r1), 0.0, r1);
    const auto mb = inject_noise(mask_cloth(b, vocab, 1.0, r2), 0.0, r2);
    REQUIRE(ma == mb);
    const auto oa = forward(img, ma, params, cfg);
    const auto ob = forward(img, mb, params, cfg);
    CHECK(oa.fused == ob.fused);
    CHECK(oa.logits == ob.logits);
    CHECK(oa.f_des_2 == ob.f_des_2);
  }
}

TEST_CASE("cached forward matches the plain forward") {
  const auto cfg = toy_with_classes();
  const auto params = init_params(cfg, 19);
  Rng rng = make_rng(20, "img");
  const auto img = random_image(32, 32, rng);
  const auto desc = testsupport::random_vector(105, rng);
  SampleCache cache;
  const auto cached = forward_cached(image_patches(img, cfg), description_vector(desc), params, cfg, cache);
  const auto plain = forward(img, desc, params, cfg);
  CHECK((cached.fused - plain.fused).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((cached.logits - plain.logits).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("analytic gradients match central differences") {
  LossConfig lc;
  SUBCASE("full model") {
    const auto cfg = tiny_config();
    const auto params = init_params(cfg, 21);
    REQUIRE(params.num_parameters() <= 2000);
    const auto b = tiny_batch(cfg, 22);
    const auto r = oracle::gradient_check(params, cfg, lc, b.patches, b.descriptions, b.labels);
    INFO("worst tensor " << r.worst_tensor);
    CHECK(r.worst < 1e-4);
  }
  SUBCASE("image-only baseline") {
    const auto cfg = tiny_config(false);
    const auto params = init_params(cfg, 23);
    const auto b = tiny_batch(cfg, 24);
    const auto r = oracle::gradient_check(params, cfg, lc, b.patches, b.descriptions, b.labels);
    INFO("worst tensor " << r.worst_tensor);
    CHECK(r.worst < 1e-4);
  }
  SUBCASE("learned null tokens") {
    auto cfg = tiny_config();
    cfg.null_description = NullDescription::Learned;
    const auto params = init_params(cfg, 25);
    const auto b = tiny_batch(cfg, 26, true);
    const auto r = oracle::gradient_check(params, cfg, lc, b.patches, b.descriptions, b.labels);
    INFO("worst tensor " << r.worst_tensor);
    CHECK(r.worst < 1e-4);
  }
}
