#include "made/model.hpp"

#include <cmath>
#include <numbers>

#include "made/errors.hpp"

namespace made {

namespace {

constexpr double kNormEps = 1e-5;

// ---- primitives -----------------------------------------------------------

Mat linear(const Mat& x, const LinearParams& p) {
  Mat y = x * p.weight;
  y.rowwise() += p.bias.row(0);
  return y;
}

// dx for y = xW + b; accumulates dW, db.
Mat linear_backward(const Mat& x, const Mat& dy, const LinearParams& p, LinearParams& g) {
  g.weight.noalias() += x.transpose() * dy;
  g.bias += dy.colwise().sum();
  return dy * p.weight.transpose();
}

Mat layer_norm(const Mat& x, const NormParams& p, NormCache* cache) {
  const auto T = x.rows();
  const auto D = static_cast<double>(x.cols());
  Mat xhat(x.rows(), x.cols());
  Vec rstd(T);
  for (Eigen::Index r = 0; r < T; ++r) {
    const double mu = x.row(r).sum() / D;
    const auto centered = x.row(r).array() - mu;
    const double var = centered.square().sum() / D;
    rstd(r) = 1.0 / std::sqrt(var + kNormEps);
    xhat.row(r) = centered * rstd(r);
  }
  Mat y = (xhat.array().rowwise() * p.gamma.row(0).array()).matrix();
  y.rowwise() += p.beta.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Mat layer_norm_backward(const NormCache& c, const Mat& dy, const NormParams& p, NormParams& g) {
  g.gamma += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.beta += dy.colwise().sum();
  const Mat dxhat = (dy.array().rowwise() * p.gamma.row(0).array()).matrix();
  const auto D = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).sum() / D;
    const double m2 = (dxhat.row(r).array() * c.xhat.row(r).array()).sum() / D;
    dx.row(r) = c.rstd(r) * (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2);
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void softmax_rows(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

// ---- transformer block -----------------------------------------------------

Mat block_forward(const BlockParams& p, const Mat& x, int heads, BlockCache* cache) {
  const auto T = x.rows();
  const auto D = x.cols();
  const auto dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  NormCache n1;
  Mat h1 = layer_norm(x, p.norm1, cache ? &n1 : nullptr);
  Mat qkv = linear(h1, p.qkv);
  Mat ctx(T, D);
  std::vector<Mat> attn;
  for (int h = 0; h < heads; ++h) {
    const auto Q = qkv.block(0, h * dh, T, dh);
    const auto K = qkv.block(0, D + h * dh, T, dh);
    const auto V = qkv.block(0, 2 * D + h * dh, T, dh);
    Mat s = (Q * K.transpose()) * scale;
    softmax_rows(s);
    ctx.block(0, h * dh, T, dh).noalias() = s * V;
    if (cache) attn.push_back(std::move(s));
  }
  Mat x_mid = x + linear(ctx, p.proj);

  NormCache n2;
  Mat h2 = layer_norm(x_mid, p.norm2, cache ? &n2 : nullptr);
  Mat pre = linear(h2, p.fc1);
  Mat act = pre.unaryExpr([](double v) { return gelu(v); });
  Mat out = x_mid + linear(act, p.fc2);

  if (cache) {
    cache->x_in = x;
    cache->h1 = std::move(h1);
    cache->qkv = std::move(qkv);
    cache->ctx = std::move(ctx);
    cache->attn = std::move(attn);
    cache->x_mid = std::move(x_mid);
    cache->h2 = std::move(h2);
    cache->pre_act = std::move(pre);
    cache->act = std::move(act);
    cache->n1 = std::move(n1);
    cache->n2 = std::move(n2);
  }
  return out;
}

Mat block_backward(const BlockParams& p, const BlockCache& c, const Mat& dout, int heads, BlockParams& g) {
  const auto T = dout.rows();
  const auto D = dout.cols();
  const auto dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // MLP branch.
  Mat dx_mid = dout;
  Mat dact = linear_backward(c.act, dout, p.fc2, g.fc2);
  Mat dpre = dact.array() * c.pre_act.unaryExpr([](double v) { return gelu_grad(v); }).array();
  Mat dh2 = linear_backward(c.h2, dpre, p.fc1, g.fc1);
  dx_mid += layer_norm_backward(c.n2, dh2, p.norm2, g.norm2);

  // Attention branch.
  Mat dctx = linear_backward(c.ctx, dx_mid, p.proj, g.proj);
  Mat dqkv = Mat::Zero(T, 3 * D);
  for (int h = 0; h < heads; ++h) {
    const auto Q = c.qkv.block(0, h * dh, T, dh);
    const auto K = c.qkv.block(0, D + h * dh, T, dh);
    const auto V = c.qkv.block(0, 2 * D + h * dh, T, dh);
    const Mat& A = c.attn[static_cast<std::size_t>(h)];
    const auto dctx_h = dctx.block(0, h * dh, T, dh);
    Mat dA = dctx_h * V.transpose();
    dqkv.block(0, 2 * D + h * dh, T, dh).noalias() = A.transpose() * dctx_h;
    const Vec row_dot = (dA.array() * A.array()).rowwise().sum();
    Mat dS = (A.array() * (dA.colwise() - row_dot).array()).matrix();
    dqkv.block(0, h * dh, T, dh).noalias() = (dS * K) * scale;
    dqkv.block(0, D + h * dh, T, dh).noalias() = (dS.transpose() * Q) * scale;
  }
  Mat dh1 = linear_backward(c.h1, dqkv, p.qkv, g.qkv);
  return dx_mid + layer_norm_backward(c.n1, dh1, p.norm1, g.norm1);
}

Mat run_blocks(const std::vector<BlockParams>& blocks, Mat x, int heads, std::vector<BlockCache>* caches) {
  if (caches) caches->resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = block_forward(blocks[i], x, heads, caches ? &(*caches)[i] : nullptr);
  }
  return x;
}

Mat run_blocks_backward(const std::vector<BlockParams>& blocks, const std::vector<BlockCache>& caches,
                        Mat d, int heads, std::vector<BlockParams>& grads) {
  for (std::size_t i = blocks.size(); i-- > 0;) d = block_backward(blocks[i], caches[i], d, heads, grads[i]);
  return d;
}

void check_finite(const Mat& m, const char* where) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite activations in ") + where);
}

// ---- parameter helpers -----------------------------------------------------

Mat randn(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * standard_normal(rng);
  return m;
}

LinearParams make_linear(int in, int out, double std, Rng& rng) {
  return {randn(in, out, std, rng), Mat::Zero(1, out)};
}

NormParams make_norm(int d) { return {Mat::Ones(1, d), Mat::Zero(1, d)}; }

BlockParams make_block(const ModelConfig& c, Rng& rng) {
  const int D = c.embed_dim;
  const double s = c.init_scale;
  BlockParams b;
  b.norm1 = make_norm(D);
  b.qkv = make_linear(D, 3 * D, s / std::sqrt(D), rng);
  b.proj = make_linear(D, D, s / std::sqrt(D) * 0.5, rng);
  b.norm2 = make_norm(D);
  b.fc1 = make_linear(D, c.mlp_hidden, s / std::sqrt(D), rng);
  b.fc2 = make_linear(c.mlp_hidden, D, s / std::sqrt(c.mlp_hidden) * 0.5, rng);
  return b;
}

template <class Params, class Fn>
void visit(Params& p, Fn&& fn) {
  auto lin = [&](const std::string& n, auto& l) {
    fn(n + ".weight", l.weight);
    fn(n + ".bias", l.bias);
  };
  auto norm = [&](const std::string& n, auto& l) {
    fn(n + ".gamma", l.gamma);
    fn(n + ".beta", l.beta);
  };
  auto blocks = [&](const std::string& stage, auto& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto n = stage + "." + std::to_string(i);
      norm(n + ".norm1", v[i].norm1);
      lin(n + ".qkv", v[i].qkv);
      lin(n + ".proj", v[i].proj);
      norm(n + ".norm2", v[i].norm2);
      lin(n + ".fc1", v[i].fc1);
      lin(n + ".fc2", v[i].fc2);
    }
  };
  lin("patch_embed", p.patch_embed);
  fn("cls_token", p.cls_token);
  fn("pos_embed", p.pos_embed);
  fn("des_token", p.des_token);
  if (p.desc_proj.weight.size() > 0) lin("desc_proj", p.desc_proj);
  if (p.null_tokens.size() > 0) fn("null_tokens", p.null_tokens);
  fn("fusion_pos", p.fusion_pos);
  blocks("stage1", p.stage1);
  blocks("stage2", p.stage2);
  blocks("stage3", p.stage3);
  fn("agg_weight", p.agg_weight);
  fn("agg_bias", p.agg_bias);
  norm("agg_norm", p.agg_norm);
  lin("classifier", p.classifier);
}

}  // namespace

// ---- config ------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (patch_size < 1 || height < 1 || width < 1) fail("sizes must be positive");
  if (height % patch_size != 0 || width % patch_size != 0) {
    fail("patch size " + std::to_string(patch_size) + " does not divide " + std::to_string(height) + "x" +
         std::to_string(width));
  }
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0) {
    fail("embed_dim must be divisible by num_heads");
  }
  if (mlp_hidden < 1) fail("mlp_hidden must be >= 1");
  for (int l : stage_layers) {
    if (l < 1) fail("every stage needs at least one layer");
  }
  if (desc_tokens < 1) fail("desc_tokens must be >= 1");
  if (vocab_size < 1) fail("vocab_size must be >= 1");
  if (num_classes < 1) fail("num_classes must be >= 1");
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.height = 224;
  c.width = 224;
  c.patch_size = 16;
  c.embed_dim = 1024;
  c.num_heads = 16;
  c.mlp_hidden = 4096;
  c.stage_layers = {10, 10, 4};
  return c;
}

// ---- params ------------------------------------------------------------------

void ModelParams::for_each(const std::function<void(const std::string&, Mat&)>& fn) { visit(*this, fn); }

void ModelParams::for_each(const std::function<void(const std::string&, const Mat&)>& fn) const {
  visit(*this, fn);
}

std::size_t ModelParams::num_parameters() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Mat& m) { ok = ok && m.allFinite(); });
  return ok;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  z.for_each([](const std::string&, Mat& m) { m.setZero(); });
  return z;
}

ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  const int D = c.embed_dim;
  const double s = c.init_scale;
  ModelParams p;
  p.patch_embed = make_linear(c.patch_dim(), D, s / std::sqrt(c.patch_dim()) * 2.0, rng);
  p.cls_token = randn(1, D, 0.02, rng);
  p.pos_embed = randn(c.stage1_length(), D, 0.02, rng);
  p.des_token = randn(1, D, 0.02, rng);
  if (c.use_description) {
    p.desc_proj = make_linear(c.vocab_size, c.desc_tokens * D, s / std::sqrt(c.vocab_size) * 2.0, rng);
    if (c.null_description == NullDescription::Learned) p.null_tokens = randn(c.desc_tokens, D, 0.02, rng);
  }
  p.fusion_pos = randn(c.fusion_length(), D, 0.02, rng);
  for (int i = 0; i < c.stage_layers[0]; ++i) p.stage1.push_back(make_block(c, rng));
  for (int i = 0; i < c.stage_layers[1]; ++i) p.stage2.push_back(make_block(c, rng));
  for (int i = 0; i < c.stage_layers[2]; ++i) p.stage3.push_back(make_block(c, rng));
  p.agg_weight = Mat::Constant(1, 3, 1.0 / 3.0);
  p.agg_bias = Mat::Zero(1, 1);
  p.agg_norm = make_norm(D);
  p.agg_norm.gamma.setConstant(c.fused_gain);
  p.classifier = make_linear(D, c.num_classes, s / std::sqrt(D), rng);
  return p;
}

void zero_residual_branches(ModelParams& params) {
  for (auto* stage : {&params.stage1, &params.stage2, &params.stage3}) {
    for (auto& b : *stage) {
      b.proj.weight.setZero();
      b.proj.bias.setZero();
      b.fc2.weight.setZero();
      b.fc2.bias.setZero();
    }
  }
}

// ---- forward operations ------------------------------------------------------

Mat image_patches(const Image& image, const ModelConfig& c) {
  if (image.height != c.height || image.width != c.width ||
      image.pixels.size() != static_cast<std::size_t>(c.height) * c.width * 3) {
    throw ShapeError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     ", model expects " + std::to_string(c.height) + "x" + std::to_string(c.width) + "x3");
  }
  const int P = c.patch_size;
  const int cols = c.width / P;
  Mat out(c.num_patches(), c.patch_dim());
  for (int n = 0; n < c.num_patches(); ++n) {
    const int py = (n / cols) * P, px = (n % cols) * P;
    int k = 0;
    for (int y = 0; y < P; ++y) {
      for (int x = 0; x < P; ++x) {
        for (int ch = 0; ch < 3; ++ch) out(n, k++) = image.at(py + y, px + x, ch) / 255.0 - 0.5;
      }
    }
  }
  return out;
}

Mat embed_patches(const Mat& patches, const ModelParams& p, const ModelConfig& c) {
  if (patches.rows() != c.num_patches() || patches.cols() != c.patch_dim()) {
    throw ShapeError("patch matrix has wrong shape");
  }
  Mat seq(c.stage1_length(), c.embed_dim);
  seq.row(0) = p.cls_token.row(0);
  seq.bottomRows(c.num_patches()) = linear(patches, p.patch_embed);
  return seq + p.pos_embed;
}

Mat patchify(const Image& image, const ModelParams& p, const ModelConfig& c) {
  return embed_patches(image_patches(image, c), p, c);
}

Stage1Result stage1(const Mat& tokens, const ModelParams& p, const ModelConfig& c) {
  if (tokens.rows() != c.stage1_length() || tokens.cols() != c.embed_dim) {
    throw ShapeError("stage 1 expects " + std::to_string(c.stage1_length()) + " tokens");
  }
  Mat out = run_blocks(p.stage1, tokens, c.num_heads, nullptr);
  check_finite(out, "stage 1");
  Vec cls = out.row(0).transpose();
  return {std::move(out), std::move(cls)};
}

Mat project_description(const Vec& d, const ModelParams& p, const ModelConfig& c) {
  if (!c.use_description) throw ShapeError("model has no description pathway");
  if (d.size() != c.vocab_size) {
    throw ShapeError("description has length " + std::to_string(d.size()) + ", model expects " +
                     std::to_string(c.vocab_size));
  }
  const Mat flat = linear(d.transpose(), p.desc_proj);  // 1 x K*D
  Mat tokens(c.desc_tokens, c.embed_dim);
  for (int k = 0; k < c.desc_tokens; ++k) tokens.row(k) = flat.block(0, k * c.embed_dim, 1, c.embed_dim);
  return tokens;
}

Mat project_description(const AttributeVector& d, const ModelParams& p, const ModelConfig& c) {
  Vec v(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) v(static_cast<Eigen::Index>(i)) = d[i];
  return project_description(v, p, c);
}

Mat null_description_tokens(const ModelParams& p, const ModelConfig& c) {
  if (!c.use_description) return Mat(0, c.embed_dim);
  if (c.null_description == NullDescription::Learned) return p.null_tokens;
  return project_description(Vec::Zero(c.vocab_size), p, c);
}

namespace {

Mat build_fusion_sequence(const Mat& patch_tokens, const Mat& desc_tokens, const ModelParams& p,
                          const ModelConfig& c) {
  const int K = c.use_description ? c.desc_tokens : 0;
  if (patch_tokens.rows() != c.num_patches() || patch_tokens.cols() != c.embed_dim) {
    throw ShapeError("fusion expects " + std::to_string(c.num_patches()) + " patch tokens");
  }
  if (K > 0 && (desc_tokens.rows() != K || desc_tokens.cols() != c.embed_dim)) {
    throw ShapeError("fusion expects " + std::to_string(K) + " description tokens");
  }
  Mat seq(c.fusion_length(), c.embed_dim);
  seq.row(0) = p.des_token.row(0);
  if (K > 0) seq.middleRows(1, K) = desc_tokens;
  seq.bottomRows(c.num_patches()) = patch_tokens;
  return seq + p.fusion_pos;
}

}  // namespace

FusionResult fuse_stages(const Mat& patch_tokens, const Mat& desc_tokens, const ModelParams& p,
                         const ModelConfig& c) {
  Mat seq = build_fusion_sequence(patch_tokens, desc_tokens, p, c);
  FusionResult r;
  r.sequence_length = static_cast<int>(seq.rows());
  seq = run_blocks(p.stage2, std::move(seq), c.num_heads, nullptr);
  check_finite(seq, "stage 2");
  r.f_des_2 = seq.row(0).transpose();
  seq = run_blocks(p.stage3, std::move(seq), c.num_heads, nullptr);
  check_finite(seq, "stage 3");
  r.f_des_3 = seq.row(0).transpose();
  return r;
}

Vec aggregate(const Vec& f_cls_v, const Vec& f_des_2, const Vec& f_des_3, const ModelParams& p) {
  if (f_cls_v.size() != f_des_2.size() || f_cls_v.size() != f_des_3.size() ||
      f_cls_v.size() != p.agg_norm.gamma.cols()) {
    throw ShapeError("aggregate expects three D-vectors");
  }
  const Vec pre = p.agg_weight(0, 0) * f_cls_v + p.agg_weight(0, 1) * f_des_2 + p.agg_weight(0, 2) * f_des_3 +
                  Vec::Constant(f_cls_v.size(), p.agg_bias(0, 0));
  return layer_norm(pre.transpose(), p.agg_norm, nullptr).row(0).transpose();
}

ForwardOutput forward(const Image& image, const std::optional<AttributeVector>& description,
                      const ModelParams& p, const ModelConfig& c) {
  ForwardOutput out;
  const Mat tokens = patchify(image, p, c);
  out.stage1_length = static_cast<int>(tokens.rows());
  auto s1 = stage1(tokens, p, c);
  out.f_cls_v = s1.f_cls_v;
  Mat desc;
  if (c.use_description) {
    desc = description ? project_description(*description, p, c) : null_description_tokens(p, c);
  }
  auto fr = fuse_stages(s1.tokens.bottomRows(c.num_patches()), desc, p, c);
  out.fusion_length = fr.sequence_length;
  out.f_des_2 = fr.f_des_2;
  out.f_des_3 = fr.f_des_3;
  out.fused = aggregate(out.f_cls_v, out.f_des_2, out.f_des_3, p);
  out.logits = linear(out.fused.transpose(), p.classifier).row(0).transpose();
  return out;
}

Vec embed_inference(const Image& image, const ModelParams& p, const ModelConfig& c) {
  Vec f = forward(image, std::nullopt, p, c).fused;
  const double n = f.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("degenerate embedding norm");
  return f / n;
}

// ---- training path -------------------------------------------------------------

const ForwardOutput& forward_cached(const Mat& patches, const Vec& description, const ModelParams& p,
                                    const ModelConfig& c, SampleCache& cache) {
  cache.patches = patches;
  cache.description = description;
  cache.used_null = description.size() == 0;

  Mat seq = embed_patches(patches, p, c);
  cache.s1_out = run_blocks(p.stage1, std::move(seq), c.num_heads, &cache.s1);
  check_finite(cache.s1_out, "stage 1");

  Mat desc;
  if (c.use_description) {
    desc = cache.used_null ? null_description_tokens(p, c) : project_description(description, p, c);
  }
  Mat fseq = build_fusion_sequence(cache.s1_out.bottomRows(c.num_patches()), desc, p, c);
  cache.s2_out = run_blocks(p.stage2, std::move(fseq), c.num_heads, &cache.s2);
  cache.s3_out = run_blocks(p.stage3, cache.s2_out, c.num_heads, &cache.s3);
  check_finite(cache.s3_out, "stage 3");

  auto& out = cache.out;
  out.stage1_length = c.stage1_length();
  out.fusion_length = c.fusion_length();
  out.f_cls_v = cache.s1_out.row(0).transpose();
  out.f_des_2 = cache.s2_out.row(0).transpose();
  out.f_des_3 = cache.s3_out.row(0).transpose();
  cache.agg_pre = p.agg_weight(0, 0) * out.f_cls_v + p.agg_weight(0, 1) * out.f_des_2 +
                  p.agg_weight(0, 2) * out.f_des_3 + Vec::Constant(c.embed_dim, p.agg_bias(0, 0));
  out.fused = layer_norm(cache.agg_pre.transpose(), p.agg_norm, &cache.agg_norm).row(0).transpose();
  out.logits = linear(out.fused.transpose(), p.classifier).row(0).transpose();
  return out;
}

void backward_cached(const SampleCache& cache, const Vec& d_fused_in, const Vec& d_logits,
                     const ModelParams& p, const ModelConfig& c, ModelParams& g) {
  const auto& out = cache.out;
  const int D = c.embed_dim;
  const int N = c.num_patches();
  const int K = c.use_description ? c.desc_tokens : 0;

  // Classifier.
  const Mat d_fused_row =
      linear_backward(out.fused.transpose(), d_logits.transpose(), p.classifier, g.classifier) +
      d_fused_in.transpose();

  // Aggregation.
  const Vec d_pre = layer_norm_backward(cache.agg_norm, d_fused_row, p.agg_norm, g.agg_norm).row(0).transpose();
  g.agg_weight(0, 0) += d_pre.dot(out.f_cls_v);
  g.agg_weight(0, 1) += d_pre.dot(out.f_des_2);
  g.agg_weight(0, 2) += d_pre.dot(out.f_des_3);
  g.agg_bias(0, 0) += d_pre.sum();

  // Stage 3 then stage 2.
  Mat d = Mat::Zero(c.fusion_length(), D);
  d.row(0) += p.agg_weight(0, 2) * d_pre.transpose();
  d = run_blocks_backward(p.stage3, cache.s3, std::move(d), c.num_heads, g.stage3);
  d.row(0) += p.agg_weight(0, 1) * d_pre.transpose();
  d = run_blocks_backward(p.stage2, cache.s2, std::move(d), c.num_heads, g.stage2);

  // Fusion sequence inputs.
  g.fusion_pos += d;
  g.des_token += d.row(0);
  if (K > 0) {
    const Mat d_desc = d.middleRows(1, K);
    if (cache.used_null && c.null_description == NullDescription::Learned) {
      g.null_tokens += d_desc;
    } else {
      Mat d_flat(1, K * D);
      for (int k = 0; k < K; ++k) d_flat.block(0, k * D, 1, D) = d_desc.row(k);
      g.desc_proj.bias += d_flat;
      if (!cache.used_null) g.desc_proj.weight.noalias() += cache.description * d_flat;
    }
  }

  // Stage 1.
  Mat d1 = Mat::Zero(c.stage1_length(), D);
  d1.bottomRows(N) = d.bottomRows(N);
  d1.row(0) += p.agg_weight(0, 0) * d_pre.transpose();
  d1 = run_blocks_backward(p.stage1, cache.s1, std::move(d1), c.num_heads, g.stage1);
  g.pos_embed += d1;
  g.cls_token += d1.row(0);
  linear_backward(cache.patches, d1.bottomRows(N), p.patch_embed, g.patch_embed);
}

Vec description_vector(const AttributeVector& bits) {
  Vec v(static_cast<Eigen::Index>(bits.size()));
  for (std::size_t i = 0; i < bits.size(); ++i) v(static_cast<Eigen::Index>(i)) = bits[i];
  return v;
}

}  // namespace made
