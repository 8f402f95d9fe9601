#include "made/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "made/checkpoint.hpp"
#include "made/errors.hpp"

namespace made {

namespace {

void clip_gradients(ModelParams& grads, double max_norm) {
  double sq = 0;
  grads.for_each([&](const std::string&, const Mat& m) { sq += m.squaredNorm(); });
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  grads.for_each([&](const std::string&, Mat& m) { m *= scale; });
}

std::vector<Mat*> tensors(ModelParams& p) {
  std::vector<Mat*> out;
  p.for_each([&](const std::string&, Mat& m) { out.push_back(&m); });
  return out;
}

std::vector<const Mat*> tensors(const ModelParams& p) {
  std::vector<const Mat*> out;
  p.for_each([&](const std::string&, const Mat& m) { out.push_back(&m); });
  return out;
}

std::uint8_t bilinear(const Image& img, double y, double x, int c) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - y0, fx = x - x0;
  const double v = (1 - fy) * ((1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c)) +
                   fy * ((1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c));
  return static_cast<std::uint8_t>(std::clamp(static_cast<int>(std::lround(v)), 0, 255));
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (ids_per_batch < 2) fail("ids_per_batch must be >= 2 (triplet mining needs negatives)");
  if (images_per_id < 2) fail("images_per_id must be >= 2 (triplet mining needs positives)");
  if (epochs < 1) fail("epochs must be >= 1");
  if (steps_per_epoch < 0) fail("steps_per_epoch must be >= 0");
  if (!(base_lr > 0) || !(warmup_start_lr > 0)) fail("learning rates must be > 0");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum must lie in [0,1)");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (!(warmup_epochs >= 0)) fail("warmup_epochs must be >= 0");
  if (!(lr_decay > 0)) fail("lr_decay must be > 0");
  if (!(crop_min_scale > 0 && crop_min_scale <= 1)) fail("crop_min_scale must lie in (0,1]");
  if (!(erase_prob >= 0 && erase_prob <= 1)) fail("erase_prob must lie in [0,1]");
  if (!(erase_area_min > 0 && erase_area_min <= erase_area_max && erase_area_max <= 1)) {
    fail("erase area bounds must satisfy 0 < min <= max <= 1");
  }
  if (!(mask_ratio >= 0 && mask_ratio <= 1)) fail("mask_ratio must lie in [0,1]");
  if (!(noise_ratio >= 0 && noise_ratio <= 1)) fail("noise_ratio must lie in [0,1]");
  if (!(null_description_prob >= 0 && null_description_prob <= 1)) fail("null_description_prob must lie in [0,1]");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
  if (!(grad_clip >= 0)) fail("grad_clip must be >= 0");
}

std::vector<std::size_t> pk_sample(const std::vector<SampleRecord>& records, int P, int K, Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < records.size(); ++i) by_id[records[i].identity_id].push_back(i);
  if (static_cast<int>(by_id.size()) < P) {
    throw SamplingError("need " + std::to_string(P) + " identities, train split has " + std::to_string(by_id.size()));
  }
  std::vector<const std::vector<std::size_t>*> groups;
  for (const auto& [id, v] : by_id) groups.push_back(&v);
  std::vector<std::size_t> batch;
  batch.reserve(static_cast<std::size_t>(P * K));
  for (auto g : sample_without_replacement(rng, groups.size(), static_cast<std::size_t>(P))) {
    const auto& members = *groups[g];
    if (members.size() >= static_cast<std::size_t>(K)) {
      for (auto j : sample_without_replacement(rng, members.size(), static_cast<std::size_t>(K))) {
        batch.push_back(members[j]);
      }
    } else {
      for (int k = 0; k < K; ++k) batch.push_back(members[uniform_index(rng, members.size())]);
    }
  }
  return batch;
}

double lr_at(int epoch, int step, int steps_per_epoch, const TrainConfig& c) {
  const double t = epoch + (steps_per_epoch > 0 ? static_cast<double>(step) / steps_per_epoch : 0.0);
  if (t < c.warmup_epochs) {
    return c.warmup_start_lr + (c.base_lr - c.warmup_start_lr) * (t / c.warmup_epochs);
  }
  double lr = c.base_lr;
  for (int m : c.lr_milestones) {
    if (epoch >= m) lr *= c.lr_decay;
  }
  return lr;
}

Image random_resized_crop(const Image& image, Rng& rng, double min_scale) {
  const double area = static_cast<double>(image.height) * image.width;
  const double scale = uniform_real(rng, min_scale, 1.0);
  const double ratio = std::exp(uniform_real(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
  const int ch = std::clamp(static_cast<int>(std::lround(std::sqrt(scale * area / ratio))), 1, image.height);
  const int cw = std::clamp(static_cast<int>(std::lround(std::sqrt(scale * area * ratio))), 1, image.width);
  const int y0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image.height - ch + 1)));
  const int x0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image.width - cw + 1)));
  Image out(image.height, image.width);
  const double sy = static_cast<double>(ch) / image.height, sx = static_cast<double>(cw) / image.width;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double src_y = y0 + (y + 0.5) * sy - 0.5;
      const double src_x = x0 + (x + 0.5) * sx - 0.5;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = bilinear(image, src_y, src_x, c);
    }
  }
  return out;
}

Image random_erase(const Image& image, Rng& rng, double area_min, double area_max, EraseInfo* info) {
  const double area = static_cast<double>(image.height) * image.width;
  const double target = uniform_real(rng, area_min, area_max) * area;
  const double ratio = std::exp(uniform_real(rng, std::log(0.3), std::log(1.0 / 0.3)));
  const int h = std::clamp(static_cast<int>(std::lround(std::sqrt(target * ratio))), 1, image.height);
  const int w = std::clamp(static_cast<int>(std::lround(std::sqrt(target / ratio))), 1, image.width);
  const int y0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image.height - h + 1)));
  const int x0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image.width - w + 1)));
  Image out = image;
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<std::uint8_t>(rng() & 0xff);
    }
  }
  if (info) *info = {true, y0, x0, y0 + h, x0 + w};
  return out;
}

Image augment(const Image& image, Rng& rng, const TrainConfig& c, EraseInfo* erase) {
  if (erase) *erase = {};
  Image out = c.aug_crop ? random_resized_crop(image, rng, c.crop_min_scale) : image;
  if (c.aug_erase && uniform01(rng) < c.erase_prob) {
    out = random_erase(out, rng, c.erase_area_min, c.erase_area_max, erase);
  }
  return out;
}

SgdMomentum::SgdMomentum(const ModelParams& like, double momentum, double weight_decay)
    : velocity_(like.zeros_like()), momentum_(momentum), weight_decay_(weight_decay) {}

void SgdMomentum::step(ModelParams& params, const ModelParams& grads, double lr) {
  auto p = tensors(params);
  auto g = tensors(grads);
  auto v = tensors(velocity_);
  for (std::size_t i = 0; i < p.size(); ++i) {
    Mat d = *g[i] + weight_decay_ * *p[i];
    *v[i] = momentum_ * *v[i] + d;
    *p[i] -= lr * *v[i];
  }
}

LossBreakdown batch_loss_and_grad(const std::vector<Mat>& patches, const std::vector<Vec>& descriptions,
                                  const std::vector<int>& labels, const ModelParams& params,
                                  const ModelConfig& mc, const LossConfig& lc, ModelParams* grads) {
  const auto B = patches.size();
  if (B == 0 || descriptions.size() != B || labels.size() != B) throw ArgumentError("inconsistent batch");
  std::vector<SampleCache> caches(B);
  Mat logits(static_cast<Eigen::Index>(B), mc.num_classes);
  Mat feats(static_cast<Eigen::Index>(B), mc.embed_dim);
  for (std::size_t i = 0; i < B; ++i) {
    const auto& out = forward_cached(patches[i], descriptions[i], params, mc, caches[i]);
    logits.row(static_cast<Eigen::Index>(i)) = out.logits.transpose();
    feats.row(static_cast<Eigen::Index>(i)) = out.fused.transpose();
  }
  Mat d_logits, d_feats;
  const auto loss = total_loss(logits, feats, labels, lc, grads ? &d_logits : nullptr, grads ? &d_feats : nullptr);
  if (grads) {
    for (std::size_t i = 0; i < B; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      backward_cached(caches[i], d_feats.row(r).transpose(), d_logits.row(r).transpose(), params, mc, *grads);
    }
  }
  return loss;
}

std::vector<Image> load_images(const std::vector<SampleRecord>& records) {
  std::vector<Image> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(read_png(r.image_path));
  return out;
}

std::vector<Vec> embed_records(const std::vector<SampleRecord>& records, const ModelParams& params,
                               const ModelConfig& config) {
  std::vector<Vec> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(embed_inference(read_png(r.image_path), params, config));
  return out;
}

TrainResult train(const DatasetManifest& manifest, const AttributeVocabulary& vocab, ModelConfig mc,
                  const TrainConfig& tc, const LossConfig& lc, const TrainOptions& opt) {
  tc.validate();
  lc.validate();
  const auto records = manifest.subset(Split::Train);
  if (records.empty()) throw SamplingError("train split is empty");

  TrainResult result;
  std::map<int, int> class_of;
  for (const auto& r : records) class_of.emplace(r.identity_id, 0);
  if (class_of.size() < 2) throw SamplingError("training needs at least two identities");
  for (auto& [id, cls] : class_of) {
    cls = static_cast<int>(result.class_to_identity.size());
    result.class_to_identity.push_back(id);
  }
  mc.num_classes = static_cast<int>(class_of.size());
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.validate();
  result.model_config = mc;

  const auto images = load_images(records);
  const auto ground_truth = manifest.attribute_source();
  const AttributeSource& source = opt.attributes ? *opt.attributes : ground_truth;

  ModelParams params = init_params(mc, derive_seed(opt.seed, "init"));
  SgdMomentum sgd(params, tc.momentum, tc.weight_decay);
  const int steps_per_epoch =
      tc.steps_per_epoch > 0 ? tc.steps_per_epoch
                             : std::max(1, static_cast<int>(class_of.size()) / tc.ids_per_batch);

  std::ofstream log;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    log.open(opt.out_dir / "train_log.csv");
    if (!log) throw IoError("cannot write training log in " + opt.out_dir.string());
    log << "step,L_id,L_tri,L_total\n";
  }
  auto save = [&](const std::filesystem::path& path) {
    write_checkpoint(path, {mc, params, opt.vocabulary_text, result.class_to_identity});
  };

  auto describe = [&](std::size_t idx, int epoch) -> Vec {
    const int noise_epoch = tc.freeze_noise ? 0 : epoch;
    Rng rng = make_rng(derive_seed(opt.seed, "noise", static_cast<std::uint64_t>(noise_epoch)), "sample", idx);
    const auto d = build_description(records[idx].sample_id, source, vocab, tc.mask_ratio, tc.noise_ratio, rng,
                                     tc.noise_convention);
    return description_vector(d.bits);
  };

  int global_step = 0;
  const auto B = static_cast<std::size_t>(tc.ids_per_batch * tc.images_per_id);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    for (int step = 0; step < steps_per_epoch; ++step, ++global_step) {
      Rng sampler = make_rng(opt.seed, "sampler", static_cast<std::uint64_t>(global_step));
      const auto batch = pk_sample(records, tc.ids_per_batch, tc.images_per_id, sampler);

      std::vector<Mat> patches(B);
      std::vector<Vec> descs(B);
      std::vector<int> labels(B);
      for (std::size_t j = 0; j < B; ++j) {
        const auto idx = batch[j];
        Rng aug = make_rng(opt.seed, "augment", static_cast<std::uint64_t>(global_step) * B + j);
        patches[j] = image_patches(augment(images[idx], aug, tc), mc);
        labels[j] = class_of.at(records[idx].identity_id);
        if (mc.use_description) {
          const bool use_null = tc.null_description_prob > 0 && uniform01(aug) < tc.null_description_prob;
          if (!use_null) descs[j] = describe(idx, epoch);
        }
      }

      ModelParams grads = params.zeros_like();
      LossBreakdown loss;
      try {
        loss = batch_loss_and_grad(patches, descs, labels, params, mc, lc, &grads);
        if (!std::isfinite(loss.total)) throw NumericError("non-finite loss");
      } catch (const NumericError& e) {
        if (!opt.out_dir.empty()) save(opt.out_dir / "checkpoint.bin");
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(global_step) +
                           "; last good checkpoint retained");
      }
      if (tc.grad_clip > 0) clip_gradients(grads, tc.grad_clip);
      const double lr = lr_at(epoch, step, steps_per_epoch, tc);
      ModelParams before = opt.out_dir.empty() ? ModelParams{} : params;
      sgd.step(params, grads, lr);
      if (!params.all_finite()) {
        if (!opt.out_dir.empty()) {
          params = std::move(before);
          save(opt.out_dir / "checkpoint.bin");
        }
        throw NumericError("non-finite parameters after step " + std::to_string(global_step) +
                           "; last good checkpoint retained");
      }

      StepLog entry{global_step, epoch, lr, loss};
      result.log.push_back(entry);
      if (log) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", global_step, loss.id, loss.triplet, loss.total);
        log << buf;
      }
      if (opt.on_step) opt.on_step(entry);
    }
    if (!opt.out_dir.empty() && tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch%03d.bin", epoch + 1);
      save(opt.out_dir / name);
    }
  }
  if (!opt.out_dir.empty()) save(opt.out_dir / "checkpoint.bin");
  result.params = std::move(params);
  return result;
}

}  // namespace made
