#include "made/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "made/errors.hpp"
#include "made/kv.hpp"

namespace made {

namespace {

struct Field {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string b2s(bool b) { return b ? "true" : "false"; }

template <class Get>
Field int_field(std::string name, std::string help, Get member) {
  auto n = name;
  return {{std::move(name), std::move(help)},
          [member, n](RunConfig& c, const std::string& v) { member(c) = kv::to_int(v, n); },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field double_field(std::string name, std::string help, Get member) {
  auto n = name;
  return {{std::move(name), std::move(help)},
          [member, n](RunConfig& c, const std::string& v) { member(c) = kv::to_double(v, n); },
          [member](const RunConfig& c) { return kv::from_double(member(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field bool_field(std::string name, std::string help, Get member) {
  auto n = name;
  return {{std::move(name), std::move(help)},
          [member, n](RunConfig& c, const std::string& v) { member(c) = kv::to_bool(v, n); },
          [member](const RunConfig& c) { return b2s(member(const_cast<RunConfig&>(c))); }};
}

Field retention_field(Category cat) {
  const std::string name = "gen.retention." + std::string(category_name(cat));
  return {{name, "retention probability override for " + std::string(category_name(cat))},
          [cat, name](RunConfig& c, const std::string& v) {
            if (v == "default") {
              c.gen.retention.erase(cat);
            } else {
              c.gen.retention[cat] = kv::to_double(v, name);
            }
          },
          [cat](const RunConfig& c) {
            auto it = c.gen.retention.find(cat);
            return it == c.gen.retention.end() ? std::string("default") : kv::from_double(it->second);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back({{"seed", "single source of all randomness"},
                 [](RunConfig& c, const std::string& s) { c.seed = kv::to_u64(s, "seed"); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    v.push_back({{"vocabulary", "'default' or path to a label<TAB>category file"},
                 [](RunConfig& c, const std::string& s) { c.vocabulary = s; },
                 [](const RunConfig& c) { return c.vocabulary; }});
    v.push_back(int_field("workers", "data workers (1 = bit-reproducible)", [](RunConfig& c) -> int& { return c.workers; }));

    // Generator.
    v.push_back(int_field("gen.num_identities", "total identities", [](RunConfig& c) -> int& { return c.gen.num_identities; }));
    v.push_back(int_field("gen.train_identities", "-1 = half, rounded up", [](RunConfig& c) -> int& { return c.gen.train_identities; }));
    v.push_back(int_field("gen.outfits_per_identity", "outfits per identity", [](RunConfig& c) -> int& { return c.gen.outfits_per_identity; }));
    v.push_back(int_field("gen.images_per_outfit", "images per (outfit, camera)", [](RunConfig& c) -> int& { return c.gen.images_per_outfit; }));
    v.push_back(int_field("gen.num_cameras", "cameras", [](RunConfig& c) -> int& { return c.gen.num_cameras; }));
    v.push_back(int_field("gen.cloth_palette", "distinct outfit colors", [](RunConfig& c) -> int& { return c.gen.cloth_palette; }));
    v.push_back(int_field("gen.texture_strength", "identity texture amplitude", [](RunConfig& c) -> int& { return c.gen.texture_strength; }));
    v.push_back(int_field("gen.jitter", "per-pixel noise amplitude", [](RunConfig& c) -> int& { return c.gen.jitter; }));
    v.push_back(double_field("gen.retention", "default retention probability", [](RunConfig& c) -> double& { return c.gen.retention_default; }));
    for (auto cat : kAllCategories) {
      if (!is_cloth_category(cat)) v.push_back(retention_field(cat));
    }

    // Model. Image size and patch size are shared with the generator.
    v.push_back(int_field("model.height", "image height", [](RunConfig& c) -> int& { return c.model.height; }));
    v.push_back(int_field("model.width", "image width", [](RunConfig& c) -> int& { return c.model.width; }));
    v.push_back(int_field("model.patch_size", "patch size P", [](RunConfig& c) -> int& { return c.model.patch_size; }));
    v.push_back(int_field("model.embed_dim", "token dimension D", [](RunConfig& c) -> int& { return c.model.embed_dim; }));
    v.push_back(int_field("model.num_heads", "attention heads", [](RunConfig& c) -> int& { return c.model.num_heads; }));
    v.push_back(int_field("model.mlp_hidden", "MLP hidden width", [](RunConfig& c) -> int& { return c.model.mlp_hidden; }));
    v.push_back({{"model.stage_layers", "layers per stage, e.g. 10,10,4"},
                 [](RunConfig& c, const std::string& s) {
                   const auto l = kv::to_int_list(s, "model.stage_layers");
                   if (l.size() != 3) throw ConfigError("model.stage_layers needs exactly three entries");
                   c.model.stage_layers = {l[0], l[1], l[2]};
                 },
                 [](const RunConfig& c) {
                   return kv::from_int_list({c.model.stage_layers.begin(), c.model.stage_layers.end()});
                 }});
    v.push_back(int_field("model.desc_tokens", "description tokens K", [](RunConfig& c) -> int& { return c.model.desc_tokens; }));
    v.push_back(bool_field("model.use_description", "false = image-only baseline", [](RunConfig& c) -> bool& { return c.model.use_description; }));
    v.push_back({{"model.null_description", "zeros | learned"},
                 [](RunConfig& c, const std::string& s) {
                   if (s == "zeros") c.model.null_description = NullDescription::Zeros;
                   else if (s == "learned") c.model.null_description = NullDescription::Learned;
                   else throw ConfigError("model.null_description must be 'zeros' or 'learned'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.model.null_description == NullDescription::Learned ? "learned" : "zeros");
                 }});
    v.push_back(double_field("model.fused_gain", "initial LayerNorm gain of the fused feature", [](RunConfig& c) -> double& { return c.model.fused_gain; }));
    v.push_back(double_field("model.init_scale", "initialisation scale", [](RunConfig& c) -> double& { return c.model.init_scale; }));

    // Loss.
    v.push_back(double_field("loss.lambda_id", "identity loss weight", [](RunConfig& c) -> double& { return c.loss.lambda_id; }));
    v.push_back(double_field("loss.lambda_tri", "triplet loss weight", [](RunConfig& c) -> double& { return c.loss.lambda_tri; }));
    v.push_back(double_field("loss.margin", "triplet margin", [](RunConfig& c) -> double& { return c.loss.margin; }));

    // Training.
    v.push_back(int_field("train.ids_per_batch", "identities per batch (P)", [](RunConfig& c) -> int& { return c.train.ids_per_batch; }));
    v.push_back(int_field("train.images_per_id", "images per identity (K)", [](RunConfig& c) -> int& { return c.train.images_per_id; }));
    v.push_back(int_field("train.epochs", "epochs", [](RunConfig& c) -> int& { return c.train.epochs; }));
    v.push_back(int_field("train.steps_per_epoch", "0 = identities / P", [](RunConfig& c) -> int& { return c.train.steps_per_epoch; }));
    v.push_back(double_field("train.momentum", "SGD momentum", [](RunConfig& c) -> double& { return c.train.momentum; }));
    v.push_back(double_field("train.weight_decay", "weight decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }));
    v.push_back(double_field("train.base_lr", "learning rate after warmup", [](RunConfig& c) -> double& { return c.train.base_lr; }));
    v.push_back(double_field("train.warmup_start_lr", "learning rate at step 0", [](RunConfig& c) -> double& { return c.train.warmup_start_lr; }));
    v.push_back(double_field("train.warmup_epochs", "linear warmup length", [](RunConfig& c) -> double& { return c.train.warmup_epochs; }));
    v.push_back({{"train.lr_milestones", "epochs at which the rate is multiplied by train.lr_decay"},
                 [](RunConfig& c, const std::string& s) {
                   c.train.lr_milestones = s.empty() ? std::vector<int>{} : kv::to_int_list(s, "train.lr_milestones");
                 },
                 [](const RunConfig& c) { return kv::from_int_list(c.train.lr_milestones); }});
    v.push_back(double_field("train.lr_decay", "milestone multiplier", [](RunConfig& c) -> double& { return c.train.lr_decay; }));
    v.push_back(double_field("train.grad_clip", "global gradient norm limit (0 = off)", [](RunConfig& c) -> double& { return c.train.grad_clip; }));
    v.push_back(bool_field("train.aug_crop", "random resized crop", [](RunConfig& c) -> bool& { return c.train.aug_crop; }));
    v.push_back(double_field("train.crop_min_scale", "smallest crop area fraction", [](RunConfig& c) -> double& { return c.train.crop_min_scale; }));
    v.push_back(bool_field("train.aug_erase", "random erasing", [](RunConfig& c) -> bool& { return c.train.aug_erase; }));
    v.push_back(double_field("train.erase_prob", "erasing probability", [](RunConfig& c) -> double& { return c.train.erase_prob; }));
    v.push_back(double_field("train.erase_area_min", "smallest erased area fraction", [](RunConfig& c) -> double& { return c.train.erase_area_min; }));
    v.push_back(double_field("train.erase_area_max", "largest erased area fraction", [](RunConfig& c) -> double& { return c.train.erase_area_max; }));
    v.push_back(double_field("train.null_description_prob", "chance a training sample sees the null description", [](RunConfig& c) -> double& { return c.train.null_description_prob; }));
    v.push_back(int_field("train.checkpoint_every", "epochs between checkpoints (0 = final only)", [](RunConfig& c) -> int& { return c.train.checkpoint_every; }));

    // Description extraction and mask.
    v.push_back(double_field("dem.mask_ratio", "fraction of cloth labels zeroed", [](RunConfig& c) -> double& { return c.train.mask_ratio; }));
    v.push_back(double_field("dem.noise_ratio", "fraction of positions re-drawn", [](RunConfig& c) -> double& { return c.train.noise_ratio; }));
    v.push_back({{"dem.noise_convention", "replace (random bit) | flip"},
                 [](RunConfig& c, const std::string& s) { c.train.noise_convention = parse_noise_convention(s); },
                 [](const RunConfig& c) { return to_string(c.train.noise_convention); }});
    v.push_back(bool_field("dem.freeze_noise", "one noise draw for the whole run", [](RunConfig& c) -> bool& { return c.train.freeze_noise; }));
    return v;
  }();
  return f;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key.name == key) return &f;
  }
  return nullptr;
}

void apply_preset(RunConfig& c, const std::string& name) {
  if (name == "toy") {
    c.model = ModelConfig::toy();
  } else if (name == "paper") {
    c.model = ModelConfig::paper();
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected toy or paper)");
  }
  c.gen.height = c.model.height;
  c.gen.width = c.model.width;
  c.gen.patch_size = c.model.patch_size;
}

}  // namespace

void RunConfig::validate() const {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  model.validate();
  train.validate();
  loss.validate();
  if (gen.height != model.height || gen.width != model.width || gen.patch_size != model.patch_size) {
    throw ConfigError("generator and model disagree on image or patch size");
  }
}

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const auto* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(c, value);
  c.gen.height = c.model.height;
  c.gen.width = c.model.width;
  c.gen.patch_size = c.model.patch_size;
}

std::string get_config_value(const RunConfig& c, const std::string& key) {
  const auto* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  return f->get(c);
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig c;
  const auto entries = kv::parse(text, origin);
  for (const auto& e : entries) {
    if (e.key == "preset") apply_preset(c, e.value);
  }
  for (const auto& e : entries) {
    if (e.key == "preset") continue;
    try {
      set_config_value(c, e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(origin + ":" + std::to_string(e.line) + ": " + err.what());
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string to_text(const RunConfig& c) {
  std::ostringstream o;
  o << "# resolved configuration\n";
  for (const auto& f : fields()) o << f.key.name << " = " << f.get(c) << '\n';
  return o.str();
}

void write_resolved_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_text(c);
}

AttributeVocabulary resolve_vocabulary(const RunConfig& c) {
  return c.vocabulary == "default" ? default_vocabulary() : load_vocabulary(c.vocabulary);
}

std::string resolve_vocabulary_text(const RunConfig& c) {
  if (c.vocabulary == "default") return default_vocabulary_text();
  std::ifstream in(c.vocabulary);
  if (!in) throw ConfigError("cannot open vocabulary " + c.vocabulary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace made
