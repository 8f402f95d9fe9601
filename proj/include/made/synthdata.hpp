#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "made/attribute_schema.hpp"
#include "made/dem.hpp"
#include "made/image.hpp"

namespace made {

enum class Split { Train, Query, Gallery };

std::string_view split_name(Split s);

struct SampleRecord {
  std::string sample_id;  // "<split>-<index>", the prefix decides the split
  std::filesystem::path image_path;
  int identity_id = 0;
  int camera_id = 0;
  int clothes_id = 0;
  AttributeVector attrs;

  Split split() const;
  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  std::vector<SampleRecord> records;

  std::vector<SampleRecord> subset(Split s) const;
  /// Ground-truth attributes of every record, keyed by sample id.
  MapAttributeSource attribute_source() const;
  bool operator==(const DatasetManifest&) const = default;
};

struct GenConfig {
  int num_identities = 40;       // total; the first `train_identities` form the train split
  int train_identities = -1;     // -1: half of num_identities, rounded up
  int outfits_per_identity = 3;
  int images_per_outfit = 2;     // per (outfit, camera)
  int num_cameras = 3;
  int height = 32;
  int width = 32;
  int patch_size = 8;            // only checked for divisibility
  int cloth_palette = 5;         // number of distinct colors outfits draw from
  int texture_strength = 60;     // amplitude of the identity texture
  int jitter = 6;                // per-pixel uniform noise amplitude
  double retention_default = 1.0;
  std::map<Category, double> retention;  // per cloth-irrelevant category overrides
  std::uint64_t seed = 0;

  int resolved_train_identities() const;
  double retention_of(Category c) const;
  void validate(const AttributeVocabulary& vocab) const;  // throws ConfigError
};

/// Latent appearance of one identity: one value index per cloth-irrelevant
/// category plus a texture seed.
struct IdentitySpec {
  int identity_id = 0;
  std::map<Category, int> values;
  std::uint64_t texture_seed = 0;
};

/// Value index per cloth category.
struct OutfitSpec {
  int clothes_id = 0;
  std::map<Category, int> values;
};

/// Image-space layout shared by the renderer and tests.
struct Region {
  int y0, y1, x0, x1;  // half-open
  bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

struct RenderLayout {
  Region head, torso, legs, feet;     // body column band
  Region texture_left, texture_right; // identity texture strips
  Region orientation_mark, carried_item;
  static RenderLayout for_size(int height, int width);
};

Image render(const IdentitySpec& identity, const OutfitSpec& outfit, int camera_id,
             std::uint64_t jitter_seed, const GenConfig& config);

struct GeneratedDataset {
  DatasetManifest manifest;
  std::vector<IdentitySpec> identities;
  std::vector<std::vector<OutfitSpec>> outfits;  // [identity][outfit]
};

/// Samples identities, outfits and attribute observations. No I/O; image
/// paths are relative ("images/<sample_id>.png").
GeneratedDataset sample_dataset(const GenConfig& config, const AttributeVocabulary& vocab);

/// sample_dataset + rendering + manifest.tsv / gen_config.txt under `out_dir`.
/// Returns the manifest with paths resolved against `out_dir`.
DatasetManifest generate(const GenConfig& config, const AttributeVocabulary& vocab,
                         const std::filesystem::path& out_dir);

/// Per-record jitter seed; depends only on (seed, record index).
std::uint64_t jitter_seed_for(std::uint64_t seed, std::size_t record_index);

/// Exact expected strict retention ratio the generator produces for a
/// category within a split.
double analytic_retention(const GenConfig& config, const AttributeVocabulary& vocab, Category c,
                          Split split);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Relative image paths are resolved against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path, const AttributeVocabulary& vocab);
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                               const AttributeVocabulary& vocab, const std::string& origin,
                               bool check_images = true);

}  // namespace made
