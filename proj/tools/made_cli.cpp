#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "made/analyzer.hpp"
#include "made/checkpoint.hpp"
#include "made/config.hpp"
#include "made/dem.hpp"
#include "made/errors.hpp"
#include "made/pipeline.hpp"
#include "made/synthdata.hpp"
#include "made/trainer.hpp"

namespace fs = std::filesystem;
using namespace made;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitRuntime = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  localtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

// --out wins; otherwise $MADE_OUTPUT_ROOT (default ./runs) / <command>-<timestamp>.
fs::path run_dir(const std::string& out, const std::string& command) {
  if (!out.empty()) return out;
  const char* root = std::getenv("MADE_OUTPUT_ROOT");
  fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  fs::path dir = base / (command + "-" + timestamp());
  for (int n = 1; fs::exists(dir); ++n) dir = base / (command + "-" + timestamp() + "-" + std::to_string(n));
  return dir;
}

RunConfig build_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    set_config_value(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  cfg.validate();
  cfg.gen.seed = cfg.seed;
  return cfg;
}

struct TrainOutcome {
  TrainResult result;
  fs::path dir;
};

TrainOutcome run_training(const RunConfig& cfg, const DatasetManifest& manifest, const AttributeVocabulary& vocab,
                          const fs::path& dir, const AttributeSource* attrs, bool quiet) {
  fs::create_directories(dir);
  write_resolved_config(dir / "config.txt", cfg);
  TrainOptions opt;
  opt.seed = cfg.seed;
  opt.out_dir = dir;
  opt.attributes = attrs;
  opt.vocabulary_text = resolve_vocabulary_text(cfg);
  if (!quiet) {
    opt.on_step = [](const StepLog& s) {
      if (s.step % 50 == 0) {
        std::fprintf(stderr, "step %d epoch %d lr %.3g L_id %.4f L_tri %.4f\n", s.step, s.epoch, s.lr, s.loss.id,
                     s.loss.triplet);
      }
    };
  }
  auto result = train(manifest, vocab, cfg.model, cfg.train, cfg.loss, opt);
  return {std::move(result), dir};
}

std::vector<Setting> settings_arg(const std::string& s) {
  if (s == "all") return {Setting::General, Setting::ClothChanging, Setting::SameClothes};
  return {parse_setting(s)};
}

void print_metrics(const std::vector<Metrics>& rows) {
  std::cout << metrics_csv_header() << '\n';
  for (const auto& m : rows) std::cout << metrics_csv_row(m) << '\n';
}

std::string grid_label(const std::string& axis, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%.2f", axis.c_str(), v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked attribute description embedding for cloth-changing re-identification"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path, out, manifest_path, checkpoint_path, setting = "all", attrs_path;
  std::vector<std::string> overrides;
  bool quiet = false;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override a config key (key=value), repeatable");
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset and write manifest.tsv");
  add_config(gen);
  gen->add_option("--out", out, "output directory");

  // mask-debug
  auto* dbg = app.add_subcommand("mask-debug", "Show one description before and after masking and noise");
  std::string bits, sample_id, convention = "replace";
  double mask_ratio = 1.0, noise_ratio = 0.0;
  std::uint64_t dbg_seed = 0;
  dbg->add_option("--bits", bits, "raw attribute bitstring");
  dbg->add_option("--manifest", manifest_path, "manifest to read the sample from")->check(CLI::ExistingFile);
  dbg->add_option("--attrs", attrs_path, "attribute prediction file (sample_id<TAB>bits)")->check(CLI::ExistingFile);
  dbg->add_option("--sample", sample_id, "sample id to look up");
  dbg->add_option("--mask-ratio", mask_ratio, "fraction of cloth labels zeroed")->check(CLI::Range(0.0, 1.0));
  dbg->add_option("--noise-ratio", noise_ratio, "fraction of positions re-drawn")->check(CLI::Range(0.0, 1.0));
  dbg->add_option("--convention", convention, "replace | flip");
  dbg->add_option("--seed", dbg_seed, "random seed");
  std::string vocab_path = "default";
  dbg->add_option("--vocabulary", vocab_path, "'default' or vocabulary file");

  // train
  auto* tr = app.add_subcommand("train", "Train on the manifest's train split");
  add_config(tr);
  tr->add_option("--manifest", manifest_path, "manifest.tsv")->required()->check(CLI::ExistingFile);
  tr->add_option("--attrs", attrs_path, "attribute predictions replacing ground truth")->check(CLI::ExistingFile);
  tr->add_option("--out", out, "run directory");
  tr->add_flag("--quiet", quiet, "no progress output");

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on the query/gallery splits");
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint.bin")->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", manifest_path, "manifest.tsv")->required()->check(CLI::ExistingFile);
  ev->add_option("--setting", setting, "general | cc | sc | all")
      ->check(CLI::IsMember({"general", "cc", "sc", "all"}));
  ev->add_option("--out", out, "metrics CSV path");

  // analyze
  auto* an = app.add_subcommand("analyze", "Retention statistics and ablation reports");
  an->require_subcommand(1);
  auto* ret = an->add_subcommand("retention", "Per-category retention of cloth-irrelevant labels");
  ret->add_option("--manifest", manifest_path, "manifest.tsv")->required()->check(CLI::ExistingFile);
  ret->add_option("--attrs", attrs_path, "attribute predictions (default: manifest ground truth)")
      ->check(CLI::ExistingFile);
  ret->add_option("--out", out, "CSV path")->required();
  double agreement = 1.0;
  ret->add_option("--agreement", agreement, "fraction of images that must agree (1 = strict)")
      ->check(CLI::Range(0.5, 1.0));
  ret->add_option("--vocabulary", vocab_path, "'default' or vocabulary file");
  auto* abl = an->add_subcommand("ablation", "Merge metrics CSVs and plot rank-1/mAP trends");
  std::vector<std::string> inputs;
  abl->add_option("--in", inputs, "metrics CSVs, optionally label=path")->required();
  abl->add_option("--out", out, "report directory");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run the noise or mask ablation grid end to end");
  add_config(sw);
  std::string axis;
  sw->add_option("--axis", axis, "noise | mask")->required()->check(CLI::IsMember({"noise", "mask"}));
  sw->add_option("--manifest", manifest_path, "existing dataset (default: generate one)")->check(CLI::ExistingFile);
  sw->add_option("--out", out, "sweep directory");
  sw->add_flag("--quiet", quiet, "no progress output");

  // config
  auto* cf = app.add_subcommand("config", "Print the resolved configuration or the key schema");
  add_config(cf);
  bool schema = false;
  cf->add_flag("--schema", schema, "list every accepted key");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) {
      const auto cfg = build_config(config_path, overrides);
      const auto vocab = resolve_vocabulary(cfg);
      const auto dir = run_dir(out, "gen-data");
      const auto manifest = generate(cfg.gen, vocab, dir);
      write_resolved_config(dir / "config.txt", cfg);
      std::cout << "wrote " << manifest.records.size() << " samples to " << (dir / "manifest.tsv").string() << '\n';
    } else if (*dbg) {
      const auto vocab = vocab_path == "default" ? default_vocabulary() : load_vocabulary(vocab_path);
      AttributeVector raw;
      if (!bits.empty()) {
        raw = AttributeVector::from_bitstring(bits);
        if (raw.size() != vocab.size()) {
          throw AlignmentError("--bits has length " + std::to_string(raw.size()) + ", vocabulary has " +
                               std::to_string(vocab.size()) + " labels");
        }
        sample_id = sample_id.empty() ? "<bits>" : sample_id;
      } else if (!sample_id.empty() && (!manifest_path.empty() || !attrs_path.empty())) {
        const MapAttributeSource src = attrs_path.empty() ? load_manifest(manifest_path, vocab).attribute_source()
                                                          : load_attribute_file(attrs_path, vocab);
        raw = src.lookup(sample_id);
      } else {
        throw UsageError("mask-debug needs --bits, or --sample with --manifest or --attrs");
      }
      MapAttributeSource one;
      one.add(sample_id, raw);
      Rng rng = make_rng(dbg_seed, "noise");
      const auto d = build_description(sample_id, one, vocab, mask_ratio, noise_ratio, rng,
                                       parse_noise_convention(convention));
      std::cout << "sample   " << sample_id << '\n';
      std::cout << "before   " << raw.to_bitstring() << '\n';
      std::cout << "after    " << d.bits.to_bitstring() << '\n';
      std::cout << "changed ";
      for (auto i : changed_indices(raw, d.bits)) std::cout << ' ' << i << ':' << vocab.label(i);
      std::cout << '\n';
    } else if (*tr) {
      const auto cfg = build_config(config_path, overrides);
      const auto vocab = resolve_vocabulary(cfg);
      const auto manifest = load_manifest(manifest_path, vocab);
      std::optional<MapAttributeSource> attrs;
      if (!attrs_path.empty()) attrs = load_attribute_file(attrs_path, vocab);
      const auto outcome = run_training(cfg, manifest, vocab, run_dir(out, "train"), attrs ? &*attrs : nullptr, quiet);
      std::cout << "checkpoint " << (outcome.dir / "checkpoint.bin").string() << '\n';
    } else if (*ev) {
      const auto ckpt = read_checkpoint(checkpoint_path);
      const auto vocab = parse_vocabulary(ckpt.vocabulary_text, checkpoint_path);
      const auto manifest = load_manifest(manifest_path, vocab);
      const auto rows = evaluate(manifest, ckpt.params, ckpt.config, settings_arg(setting));
      if (out.empty()) out = (run_dir("", "eval") / "metrics.csv").string();
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      write_metrics_csv(out, rows);
      print_metrics(rows);
    } else if (*an) {
      if (*ret) {
        const auto vocab = vocab_path == "default" ? default_vocabulary() : load_vocabulary(vocab_path);
        const auto manifest = load_manifest(manifest_path, vocab);
        const MapAttributeSource src =
            attrs_path.empty() ? manifest.attribute_source() : load_attribute_file(attrs_path, vocab);
        std::vector<RetentionReport> reports;
        for (auto s : {Split::Train, Split::Query, Split::Gallery}) {
          const auto recs = manifest.subset(s);
          if (!recs.empty()) reports.push_back(retention(recs, src, vocab, std::string(split_name(s)), {agreement}));
        }
        if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
        write_retention_csv(out, reports);
        for (const auto& r : reports) {
          if (r.excluded_identities > 0) {
            std::cerr << "warning: " << r.split << ": " << r.excluded_identities
                      << " identities with a single image excluded\n";
          }
        }
        std::cout << "wrote " << out << '\n';
      } else {
        std::vector<AblationInput> parsed;
        for (const auto& i : inputs) parsed.push_back(parse_ablation_input(i));
        const auto dir = run_dir(out, "ablation");
        const auto report = ablation_report(parsed, dir);
        std::cout << "wrote " << (dir / "ablation.csv").string();
        for (const auto& p : report.plots) std::cout << ", " << p.string();
        std::cout << '\n';
      }
    } else if (*sw) {
      auto cfg = build_config(config_path, overrides);
      const auto vocab = resolve_vocabulary(cfg);
      const auto dir = run_dir(out, "sweep-" + axis);
      fs::create_directories(dir);
      write_resolved_config(dir / "config.txt", cfg);
      DatasetManifest manifest;
      if (manifest_path.empty()) {
        manifest = generate(cfg.gen, vocab, dir / "data");
      } else {
        manifest = load_manifest(manifest_path, vocab);
      }
      const std::vector<double> grid =
          axis == "noise" ? std::vector<double>{0.0, 0.05, 0.10, 0.15, 0.20} : std::vector<double>{0.3, 0.6, 0.9, 1.0};
      std::vector<AblationInput> runs;
      for (double v : grid) {
        RunConfig point = cfg;
        (axis == "noise" ? point.train.noise_ratio : point.train.mask_ratio) = v;
        const auto label = grid_label(axis, v);
        const auto run = dir / label;
        if (!quiet) std::cerr << "== " << label << '\n';
        const auto outcome = run_training(point, manifest, vocab, run, nullptr, quiet);
        const auto rows = evaluate(manifest, outcome.result.params, outcome.result.model_config,
                                   settings_arg("all"));
        write_metrics_csv(run / "metrics.csv", rows);
        runs.push_back({label, run / "metrics.csv"});
      }
      const auto report = ablation_report(runs, dir / "report");
      std::cout << "ablation " << (dir / "report" / "ablation.csv").string() << '\n';
      for (const auto& r : report.rows) {
        std::printf("%-12s %-8s rank1 %.4f mAP %.4f\n", r.run.c_str(), r.setting.c_str(), r.rank1, r.mAP);
      }
    } else if (*cf) {
      if (schema) {
        for (const auto& k : config_schema()) std::cout << k.name << "\t" << k.help << '\n';
      } else {
        std::cout << to_text(build_config(config_path, overrides));
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const RuntimeFailure& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
