#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "made/attribute_schema.hpp"
#include "made/image.hpp"
#include "made/model.hpp"
#include "made/rng.hpp"

namespace testsupport {

// Six labels; the cloth ones sit at positions 2 and 5.
inline made::AttributeVocabulary six_label_vocab() {
  return made::parse_vocabulary(
      "male\tgender\n"
      "age18-30\tage\n"
      "upper-red\tupper-body-color\n"
      "backpack\tcarried-items\n"
      "shoe-black\tshoe-color\n"
      "lower-jeans\tlower-body-type\n",
      "six");
}

// About 1.4k parameters.
inline made::ModelConfig tiny_config(bool use_description = true) {
  made::ModelConfig c;
  c.height = 16;
  c.width = 16;
  c.patch_size = 8;
  c.embed_dim = 4;
  c.num_heads = 2;
  c.mlp_hidden = 8;
  c.stage_layers = {1, 1, 1};
  c.desc_tokens = 1;
  c.vocab_size = 6;
  c.num_classes = 2;
  c.use_description = use_description;
  return c;
}

inline made::Image random_image(int h, int w, made::Rng& rng) {
  made::Image img(h, w);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(made::uniform_index(rng, 256));
  return img;
}

inline made::AttributeVector random_vector(std::size_t n, made::Rng& rng) {
  made::AttributeVector v(n);
  for (std::size_t i = 0; i < n; ++i) v.set(i, made::coin(rng));
  return v;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("made_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
