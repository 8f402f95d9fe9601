#include "made/dem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "made/errors.hpp"

namespace made {

namespace {

void check_ratio(double r, const char* what) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw ArgumentError(std::string(what) + " must lie in [0,1], got " + std::to_string(r));
  }
}

}  // namespace

NoiseConvention parse_noise_convention(const std::string& s) {
  if (s == "replace") return NoiseConvention::ReplacePositions;
  if (s == "flip") return NoiseConvention::FlipPositions;
  throw ConfigError("noise_convention must be 'replace' or 'flip', got '" + s + "'");
}

std::string to_string(NoiseConvention c) {
  return c == NoiseConvention::ReplacePositions ? "replace" : "flip";
}

void MapAttributeSource::add(const std::string& sample_id, AttributeVector vec) {
  table_[sample_id] = std::move(vec);
}

const AttributeVector& MapAttributeSource::lookup(const std::string& sample_id) const {
  auto it = table_.find(sample_id);
  if (it == table_.end()) throw LookupError("no attributes for sample '" + sample_id + "'");
  return it->second;
}

MapAttributeSource load_attribute_file(const std::filesystem::path& path,
                                       const AttributeVocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open attribute file " + path.string());
  MapAttributeSource src;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw LoadError(where + ": expected 'sample_id<TAB>bitstring'");
    AttributeVector v;
    try {
      v = AttributeVector::from_bitstring(std::string_view(line).substr(tab + 1));
    } catch (const ParseError& e) {
      throw LoadError(where + ": " + e.what());
    }
    if (v.size() != vocab.size()) {
      throw LoadError(where + ": bitstring length " + std::to_string(v.size()) +
                      " != vocabulary size " + std::to_string(vocab.size()));
    }
    const auto id = line.substr(0, tab);
    if (src.contains(id)) throw LoadError(where + ": duplicate sample id '" + id + "'");
    src.add(id, std::move(v));
  }
  return src;
}

void write_attribute_file(const std::filesystem::path& path, const MapAttributeSource& source) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write attribute file " + path.string());
  for (const auto& [id, v] : source.table()) out << id << '\t' << v.to_bitstring() << '\n';
}

std::size_t ratio_count(double ratio, std::size_t n) {
  const double x = ratio * static_cast<double>(n);
  const double c = std::ceil(x - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, c)));
}

AttributeVector mask_cloth(const AttributeVector& vec, const AttributeVocabulary& vocab,
                           double mask_ratio, Rng& rng) {
  check_ratio(mask_ratio, "mask_ratio");
  if (vec.size() != vocab.size()) {
    throw AlignmentError("attribute vector length " + std::to_string(vec.size()) +
                         " does not match vocabulary size " + std::to_string(vocab.size()));
  }
  const auto cloth = cloth_indices(vocab);
  AttributeVector out = vec;
  if (mask_ratio == 1.0) {
    for (auto i : cloth) out.set(i, false);
    return out;
  }
  const auto k = ratio_count(mask_ratio, cloth.size());
  for (auto j : sample_without_replacement(rng, cloth.size(), k)) out.set(cloth[j], false);
  return out;
}

AttributeVector inject_noise(const AttributeVector& vec, double noise_ratio, Rng& rng,
                             NoiseConvention convention) {
  check_ratio(noise_ratio, "noise_ratio");
  AttributeVector out = vec;
  const auto k = ratio_count(noise_ratio, vec.size());
  for (auto i : sample_without_replacement(rng, vec.size(), k)) {
    if (convention == NoiseConvention::ReplacePositions) {
      out.set(i, coin(rng));
    } else {
      out.set(i, vec[i] == 0);
    }
  }
  return out;
}

MaskedDescription build_description(const std::string& sample_id, const AttributeSource& source,
                                    const AttributeVocabulary& vocab, double mask_ratio,
                                    double noise_ratio, Rng& rng, NoiseConvention convention) {
  const auto& raw = source.lookup(sample_id);
  auto masked = mask_cloth(raw, vocab, mask_ratio, rng);
  return {inject_noise(masked, noise_ratio, rng, convention), mask_ratio, noise_ratio, sample_id};
}

std::vector<std::size_t> changed_indices(const AttributeVector& before, const AttributeVector& after) {
  if (before.size() != after.size()) throw AlignmentError("vectors differ in length");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i] != after[i]) out.push_back(i);
  }
  return out;
}

}  // namespace made
