#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "made/dem.hpp"
#include "made/image.hpp"
#include "made/losses.hpp"
#include "made/model.hpp"
#include "made/synthdata.hpp"

namespace made {

struct TrainConfig {
  int ids_per_batch = 2;    // P
  int images_per_id = 4;    // K
  int epochs = 60;
  int steps_per_epoch = 0;  // 0: number of train identities / P (at least 1)
  double momentum = 0.9;
  double weight_decay = 5e-2;
  double base_lr = 2e-5;
  double warmup_start_lr = 7.8125e-7;
  double warmup_epochs = 5.0;
  std::vector<int> lr_milestones = {40, 60};
  double lr_decay = 0.01;   // multiplier at each milestone
  double grad_clip = 0.0;   // global gradient norm limit; 0 disables

  bool aug_crop = true;
  double crop_min_scale = 0.8;  // area fraction
  bool aug_erase = true;
  double erase_prob = 0.5;
  double erase_area_min = 0.02;
  double erase_area_max = 0.2;

  // Description building.
  double mask_ratio = 1.0;
  double noise_ratio = 0.1;
  NoiseConvention noise_convention = NoiseConvention::ReplacePositions;
  bool freeze_noise = false;  // one noise draw per sample for the whole run
  double null_description_prob = 0.0;  // chance a sample trains with the inference-time null description

  int checkpoint_every = 0;  // epochs; 0 = final checkpoint only

  void validate() const;  // throws ConfigError
};

/// P distinct identities without replacement, K images each (with
/// replacement only when an identity has fewer than K images). Returns
/// indices into `records`, grouped by identity.
std::vector<std::size_t> pk_sample(const std::vector<SampleRecord>& records, int ids_per_batch, int images_per_id,
                                   Rng& rng);

/// Warmup is linear in fractional epochs (epoch + step/steps_per_epoch).
double lr_at(int epoch, int step, int steps_per_epoch, const TrainConfig& config);

struct EraseInfo {
  bool applied = false;
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open rectangle
};

/// Random resized crop back to the input size, then random erasing.
Image augment(const Image& image, Rng& rng, const TrainConfig& config, EraseInfo* erase = nullptr);
Image random_resized_crop(const Image& image, Rng& rng, double min_scale);
Image random_erase(const Image& image, Rng& rng, double area_min, double area_max, EraseInfo* info);

struct StepLog {
  int step = 0;
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

struct TrainResult {
  ModelConfig model_config;
  ModelParams params;
  std::vector<StepLog> log;
  std::vector<int> class_to_identity;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;        // empty: no files are written
  const AttributeSource* attributes = nullptr;  // null: manifest ground truth
  std::function<void(const StepLog&)> on_step;
  std::string vocabulary_text;          // stored in checkpoints
};

/// Full training loop over the manifest's train split. Writes
/// `train_log.csv` and `checkpoint.bin` (plus periodic
/// `checkpoint_epochNNN.bin`) when out_dir is set.
TrainResult train(const DatasetManifest& manifest, const AttributeVocabulary& vocab, ModelConfig model_config,
                  const TrainConfig& train_config, const LossConfig& loss_config, const TrainOptions& options);

/// One forward/backward pass over a batch; gradients are accumulated into
/// `grads` (which must be zero-initialised by the caller). `descriptions`
/// entries may be empty (null description).
LossBreakdown batch_loss_and_grad(const std::vector<Mat>& patches, const std::vector<Vec>& descriptions,
                                  const std::vector<int>& labels, const ModelParams& params,
                                  const ModelConfig& model_config, const LossConfig& loss_config,
                                  ModelParams* grads);

/// SGD with momentum and coupled weight decay.
class SgdMomentum {
 public:
  SgdMomentum(const ModelParams& like, double momentum, double weight_decay);
  void step(ModelParams& params, const ModelParams& grads, double lr);

 private:
  ModelParams velocity_;
  double momentum_;
  double weight_decay_;
};

/// Loads every image referenced by `records`.
std::vector<Image> load_images(const std::vector<SampleRecord>& records);

/// L2-normalised inference embeddings for `records`.
std::vector<Vec> embed_records(const std::vector<SampleRecord>& records, const ModelParams& params,
                               const ModelConfig& config);

}  // namespace made
