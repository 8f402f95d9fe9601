#include <doctest.h>

#include <fstream>

#include "made/checkpoint.hpp"
#include "made/config.hpp"
#include "made/errors.hpp"
#include "made/kv.hpp"
#include "support.hpp"

using namespace made;

TEST_CASE("flat key = value parsing") {
  const auto e = kv::parse("# header\n a = 1 \n\nb=two words\n", "t");
  REQUIRE(e.size() == 2);
  CHECK(e[0].key == "a");
  CHECK(e[0].value == "1");
  CHECK(e[0].line == 2);
  CHECK(e[1].value == "two words");
  CHECK_THROWS_AS(kv::parse("a = 1\na = 2\n", "t"), ConfigError);
  CHECK_THROWS_AS(kv::parse("just words\n", "t"), ConfigError);
  CHECK(kv::to_int_list("40, 60", "k") == std::vector<int>{40, 60});
  CHECK(kv::to_bool("true", "k"));
  CHECK_FALSE(kv::to_bool("0", "k"));
  CHECK_THROWS_AS(kv::to_int("4x", "k"), ConfigError);
  CHECK_THROWS_AS(kv::to_double("", "k"), ConfigError);
  CHECK(kv::to_double(kv::from_double(0.1), "k") == 0.1);
}

TEST_CASE("defaults follow the reference training recipe") {
  const auto c = parse_run_config("");
  CHECK(c.model.height == 32);
  CHECK(c.model.patch_size == 8);
  CHECK(c.model.embed_dim == 16);
  CHECK(c.model.stage_layers == std::array<int, 3>{2, 2, 1});
  CHECK(c.model.desc_tokens == 1);
  CHECK(c.train.ids_per_batch == 2);
  CHECK(c.train.images_per_id == 4);
  CHECK(c.train.base_lr == 2e-5);
  CHECK(c.train.warmup_start_lr == 7.8125e-7);
  CHECK(c.train.lr_milestones == std::vector<int>{40, 60});
  CHECK(c.train.lr_decay == 0.01);
  CHECK(c.train.weight_decay == 5e-2);
  CHECK(c.train.noise_ratio == 0.1);
  CHECK(c.train.mask_ratio == 1.0);
  CHECK(c.loss.lambda_id == 1.0);
  CHECK(c.loss.lambda_tri == 1.0);
}

TEST_CASE("resolved text round trips") {
  auto c = parse_run_config("preset = toy\nseed = 9\ntrain.lr_milestones = 3, 7\ngen.retention = 0.85\n"
                            "gen.retention.age = 0.5\nmodel.null_description = learned\ndem.noise_convention = flip\n");
  const auto text = to_text(c);
  CHECK(text.rfind("# resolved configuration", 0) == 0);
  const auto back = parse_run_config(text);
  CHECK(to_text(back) == text);
  CHECK(back.seed == 9);
  CHECK(back.train.lr_milestones == std::vector<int>{3, 7});
  CHECK(back.gen.retention_of(Category::Age) == 0.5);
  CHECK(back.gen.retention_of(Category::Gender) == 0.85);
  CHECK(back.model.null_description == NullDescription::Learned);
  CHECK(back.train.noise_convention == NoiseConvention::FlipPositions);
  for (const auto& k : config_schema()) CHECK(get_config_value(back, k.name) == get_config_value(c, k.name));
}

TEST_CASE("the paper preset sets the large model and keeps the generator in sync") {
  const auto c = parse_run_config("model.embed_dim = 64\npreset = paper\n");
  CHECK(c.model.height == 224);
  CHECK(c.model.patch_size == 16);
  CHECK(c.model.stage_layers == std::array<int, 3>{10, 10, 4});
  CHECK(c.model.embed_dim == 64);  // explicit keys win over the preset regardless of order
  CHECK(c.gen.height == 224);
  CHECK(c.gen.patch_size == 16);
}

TEST_CASE("bad keys and values name the line") {
  auto fails_with = [](const std::string& text, const std::string& needle) {
    try {
      parse_run_config(text, "cfg");
      return false;
    } catch (const ConfigError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
  };
  CHECK(fails_with("seed = 1\nmodel.embed_dimm = 4\n", "cfg:2"));
  CHECK(fails_with("model.embed_dimm = 4\n", "model.embed_dimm"));
  CHECK(fails_with("preset = huge\n", "huge"));
  CHECK(fails_with("train.epochs = many\n", "cfg:1"));
  CHECK(fails_with("model.num_heads = 3\n", "head"));
  CHECK(fails_with("gen.retention.upper-body-color = 0.5\n", "gen.retention.upper-body-color"));
  CHECK(fails_with("model.null_description = ones\n", "zeros"));
}

TEST_CASE("the benchmark config file loads") {
  const auto c = load_run_config(std::filesystem::path(MADE_SOURCE_DIR) / "configs" / "toy.conf");
  CHECK(c.gen.num_identities == 100);
  CHECK(c.model.embed_dim == 32);
  CHECK(c.train.epochs == 40);
  CHECK_THROWS_AS(load_run_config("/nonexistent/x.conf"), ConfigError);
}

TEST_CASE("vocabulary resolution") {
  RunConfig c;
  CHECK(resolve_vocabulary(c).size() == default_vocabulary().size());
  const auto dir = testsupport::scratch_dir("vocab");
  {
    std::ofstream out(dir / "v.tsv");
    out << "male\tgender\nbag\tcarried-items\nred\tupper-body-color\n";
  }
  c.vocabulary = (dir / "v.tsv").string();
  CHECK(resolve_vocabulary(c).size() == 3);
  c.vocabulary = (dir / "missing.tsv").string();
  CHECK_THROWS_AS(resolve_vocabulary(c), ValidationError);
}

TEST_CASE("checkpoint round trip") {
  auto mc = testsupport::tiny_config();
  mc.null_description = NullDescription::Learned;
  mc.fused_gain = 0.5;
  Checkpoint ck{mc, init_params(mc, 17), "male\tgender\n", {4, 9}};
  const auto dir = testsupport::scratch_dir("ckpt");
  write_checkpoint(dir / "c.bin", ck);
  const auto back = read_checkpoint(dir / "c.bin");
  CHECK(model_config_to_text(back.config) == model_config_to_text(mc));
  CHECK(back.vocabulary_text == ck.vocabulary_text);
  CHECK(back.class_to_identity == ck.class_to_identity);
  std::vector<Mat> a, b;
  ck.params.for_each([&](const std::string&, const Mat& m) { a.push_back(m); });
  back.params.for_each([&](const std::string&, const Mat& m) { b.push_back(m); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK(model_config_from_text(model_config_to_text(mc)).fused_gain == 0.5);
}

TEST_CASE("corrupt checkpoints are load errors") {
  const auto dir = testsupport::scratch_dir("ckpt_bad");
  {
    std::ofstream out(dir / "junk.bin", std::ios::binary);
    out << "NOTACKPT and some bytes";
  }
  CHECK_THROWS_AS(read_checkpoint(dir / "junk.bin"), LoadError);
  CHECK_THROWS_AS(read_checkpoint(dir / "absent.bin"), LoadError);

  const auto mc = testsupport::tiny_config();
  write_checkpoint(dir / "c.bin", {mc, init_params(mc, 1), "", {0, 1}});
  const auto size = std::filesystem::file_size(dir / "c.bin");
  std::filesystem::resize_file(dir / "c.bin", size / 2);
  CHECK_THROWS_AS(read_checkpoint(dir / "c.bin"), LoadError);
}
