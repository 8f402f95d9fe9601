#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "made/attribute_schema.hpp"
#include "made/image.hpp"
#include "made/rng.hpp"

namespace made {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// What stands in for the description when none is available (inference).
enum class NullDescription { Zeros, Learned };

struct ModelConfig {
  int height = 32;
  int width = 32;
  int patch_size = 8;
  int embed_dim = 16;
  int num_heads = 2;
  int mlp_hidden = 32;
  std::array<int, 3> stage_layers = {2, 2, 1};
  int desc_tokens = 1;        // K
  int vocab_size = 105;       // V
  int num_classes = 5;        // C
  bool use_description = true;  // false: image-only baseline, no description tokens
  NullDescription null_description = NullDescription::Zeros;
  double init_scale = 1.0;
  double fused_gain = 1.0;    // initial LayerNorm gain on the fused feature

  int num_patches() const { return (height / patch_size) * (width / patch_size); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int stage1_length() const { return 1 + num_patches(); }
  int fusion_length() const { return 1 + (use_description ? desc_tokens : 0) + num_patches(); }

  void validate() const;  // throws ConfigError

  static ModelConfig toy();    // 32x32, P=8, D=16, [2,2,1]
  static ModelConfig paper();  // 224x224, P=16, 24 layers as [10,10,4]
};

struct LinearParams {
  Mat weight;  // in x out
  Mat bias;    // 1 x out
};

struct NormParams {
  Mat gamma;  // 1 x D
  Mat beta;   // 1 x D
};

struct BlockParams {
  NormParams norm1;
  LinearParams qkv;   // D -> 3D
  LinearParams proj;  // D -> D, attention output
  NormParams norm2;
  LinearParams fc1;   // D -> hidden
  LinearParams fc2;   // hidden -> D, MLP output
};

struct ModelParams {
  LinearParams patch_embed;
  Mat cls_token;    // 1 x D
  Mat pos_embed;    // (1+N) x D
  Mat des_token;    // 1 x D, the [DES] token
  LinearParams desc_proj;  // V -> K*D (empty for the image-only baseline)
  Mat null_tokens;  // K x D, only for NullDescription::Learned
  Mat fusion_pos;   // (1+K+N) x D
  std::vector<BlockParams> stage1, stage2, stage3;
  Mat agg_weight;   // 1 x 3, width-1 Conv1d over (f_cls, f_des_2, f_des_3)
  Mat agg_bias;     // 1 x 1
  NormParams agg_norm;
  LinearParams classifier;  // D -> C

  /// Named tensors in a fixed order (the checkpoint order).
  void for_each(const std::function<void(const std::string&, Mat&)>& fn);
  void for_each(const std::function<void(const std::string&, const Mat&)>& fn) const;

  std::size_t num_parameters() const;
  bool all_finite() const;
  /// Same shapes, all zeros.
  ModelParams zeros_like() const;
};

ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Zeroes the attention and MLP output projections of every block, turning
/// each stage into the identity on its token sequence.
void zero_residual_branches(ModelParams& params);

struct ForwardOutput {
  Vec f_cls_v;  // stage-1 class token
  Vec f_des_2;  // [DES] after stage 2
  Vec f_des_3;  // [DES] after stage 3
  Vec fused;    // aggregated, layer-normalised
  Vec logits;   // C
  int stage1_length = 0;
  int fusion_length = 0;
};

/// Image -> N x (P*P*3) patch matrix, row-major patch order, pixels mapped
/// to [-0.5, 0.5]. Shape mismatch -> ShapeError.
Mat image_patches(const Image& image, const ModelConfig& config);

/// Projected patches with the class token prepended and positional
/// embeddings added: (N+1) x D.
Mat patchify(const Image& image, const ModelParams& params, const ModelConfig& config);
Mat embed_patches(const Mat& patches, const ModelParams& params, const ModelConfig& config);

struct Stage1Result {
  Mat tokens;  // (N+1) x D
  Vec f_cls_v;
};
Stage1Result stage1(const Mat& tokens, const ModelParams& params, const ModelConfig& config);

/// V-vector -> K x D description tokens.
Mat project_description(const AttributeVector& description, const ModelParams& params,
                        const ModelConfig& config);
Mat project_description(const Vec& description, const ModelParams& params, const ModelConfig& config);

/// 0/1 bits as doubles.
Vec description_vector(const AttributeVector& bits);

/// Tokens used when the description is discarded (inference).
Mat null_description_tokens(const ModelParams& params, const ModelConfig& config);

struct FusionResult {
  Vec f_des_2;
  Vec f_des_3;
  int sequence_length = 0;
};
/// Builds [DES] ++ description tokens ++ patch tokens, runs stages 2 and 3.
/// `description_tokens` is ignored (may be empty) for the image-only baseline.
FusionResult fuse_stages(const Mat& patch_tokens, const Mat& description_tokens,
                         const ModelParams& params, const ModelConfig& config);

Vec aggregate(const Vec& f_cls_v, const Vec& f_des_2, const Vec& f_des_3, const ModelParams& params);

/// Full forward pass. `description` absent -> the null description.
ForwardOutput forward(const Image& image, const std::optional<AttributeVector>& description,
                      const ModelParams& params, const ModelConfig& config);

/// Inference embedding: forward with the null description, L2-normalised
/// fused feature. The description is never an input.
Vec embed_inference(const Image& image, const ModelParams& params, const ModelConfig& config);

// ---------------------------------------------------------------------------
// Training path: cached forward and exact backward for one sample.

struct NormCache {
  Mat xhat;
  Vec rstd;
};

struct BlockCache {
  Mat x_in, h1, qkv, ctx, x_mid, h2, pre_act, act;
  NormCache n1, n2;
  std::vector<Mat> attn;  // per head, T x T
};

struct SampleCache {
  Mat patches;
  Vec description;        // V, empty when the null description was used
  bool used_null = false;
  std::vector<BlockCache> s1, s2, s3;
  Mat s1_out, s2_out, s3_out;
  Vec agg_pre;
  NormCache agg_norm;
  ForwardOutput out;
};

/// `description` empty -> null description.
const ForwardOutput& forward_cached(const Mat& patches, const Vec& description, const ModelParams& params,
                                    const ModelConfig& config, SampleCache& cache);

/// Accumulates parameter gradients given dL/dfused and dL/dlogits.
void backward_cached(const SampleCache& cache, const Vec& d_fused, const Vec& d_logits,
                     const ModelParams& params, const ModelConfig& config, ModelParams& grads);

}  // namespace made
