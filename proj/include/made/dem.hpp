#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "made/attribute_schema.hpp"
#include "made/rng.hpp"

namespace made {

/// How a noise ratio is turned into corruption.
///  - ReplacePositions: ceil(p*V) positions are drawn and each is overwritten
///    with a fresh uniform bit, so about half of them change.
///  - FlipPositions: the drawn positions are all inverted, so exactly
///    ceil(p*V) bits change.
enum class NoiseConvention { ReplacePositions, FlipPositions };

NoiseConvention parse_noise_convention(const std::string& s);
std::string to_string(NoiseConvention c);

struct MaskedDescription {
  AttributeVector bits;
  double mask_ratio = 0.0;
  double noise_ratio = 0.0;
  std::string sample_id;
};

/// Seam for the attribute detector: maps sample ids to attribute vectors.
class AttributeSource {
 public:
  virtual ~AttributeSource() = default;
  /// Throws LookupError for an unknown sample id.
  virtual const AttributeVector& lookup(const std::string& sample_id) const = 0;
  virtual bool contains(const std::string& sample_id) const = 0;
};

/// In-memory source; also what a prediction file loads into.
class MapAttributeSource final : public AttributeSource {
 public:
  MapAttributeSource() = default;
  explicit MapAttributeSource(std::map<std::string, AttributeVector> table) : table_(std::move(table)) {}

  void add(const std::string& sample_id, AttributeVector vec);
  const AttributeVector& lookup(const std::string& sample_id) const override;
  bool contains(const std::string& sample_id) const override { return table_.count(sample_id) != 0; }
  std::size_t size() const { return table_.size(); }
  const std::map<std::string, AttributeVector>& table() const { return table_; }

 private:
  std::map<std::string, AttributeVector> table_;
};

/// Reads `sample_id<TAB>bitstring` lines; every bitstring must have length V.
MapAttributeSource load_attribute_file(const std::filesystem::path& path,
                                       const AttributeVocabulary& vocab);
void write_attribute_file(const std::filesystem::path& path, const MapAttributeSource& source);

/// Number of items selected by a ratio in [0,1]: ceil(ratio * n), robust to
/// representation error in the product (0.3 * 10 selects 3, not 4).
std::size_t ratio_count(double ratio, std::size_t n);

/// Zeroes ceil(mask_ratio * |cloth|) cloth positions drawn without
/// replacement. mask_ratio == 1 zeroes all of them without consuming rng.
AttributeVector mask_cloth(const AttributeVector& vec, const AttributeVocabulary& vocab,
                           double mask_ratio, Rng& rng);

/// Draws ceil(noise_ratio * V) positions without replacement and corrupts
/// them according to `convention`.
AttributeVector inject_noise(const AttributeVector& vec, double noise_ratio, Rng& rng,
                             NoiseConvention convention = NoiseConvention::ReplacePositions);

/// mask_cloth followed by inject_noise.
MaskedDescription build_description(const std::string& sample_id, const AttributeSource& source,
                                    const AttributeVocabulary& vocab, double mask_ratio,
                                    double noise_ratio, Rng& rng,
                                    NoiseConvention convention = NoiseConvention::ReplacePositions);

/// Positions where the two vectors differ.
std::vector<std::size_t> changed_indices(const AttributeVector& before, const AttributeVector& after);

}  // namespace made
