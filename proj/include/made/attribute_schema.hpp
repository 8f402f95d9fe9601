#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace made {

enum class Category : std::uint8_t {
  Gender,
  Age,
  Orientation,
  CarriedItems,
  UpperBodyColor,
  UpperBodyType,
  LowerBodyColor,
  LowerBodyType,
  ShoeColor,
  ShoeType,
};

inline constexpr std::array<Category, 10> kAllCategories = {
    Category::Gender,        Category::Age,           Category::Orientation,
    Category::CarriedItems,  Category::UpperBodyColor, Category::UpperBodyType,
    Category::LowerBodyColor, Category::LowerBodyType, Category::ShoeColor,
    Category::ShoeType,
};

std::string_view category_name(Category c);
Category parse_category(std::string_view name);  // throws SchemaError
bool is_cloth_category(Category c);

/// Ordered attribute label space. Immutable once built.
class AttributeVocabulary {
 public:
  struct Entry {
    std::string label;
    Category category;
  };

  explicit AttributeVocabulary(std::vector<Entry> entries);

  std::size_t size() const { return entries_.size(); }
  const std::string& label(std::size_t i) const { return entries_.at(i).label; }
  Category category_of(std::size_t i) const { return entries_.at(i).category; }
  bool cloth_related(std::size_t i) const { return is_cloth_category(category_of(i)); }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Position of `label`, or -1.
  long index_of(std::string_view label) const;

  /// Label positions belonging to `c`, ascending.
  std::vector<std::size_t> indices_of(Category c) const;

  /// Categories that actually occur, in enum order.
  std::vector<Category> categories() const;

  bool operator==(const AttributeVocabulary& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using VocabularyPtr = std::shared_ptr<const AttributeVocabulary>;

/// Parses `label<TAB>category` lines; `#` lines and blank lines are skipped.
AttributeVocabulary parse_vocabulary(std::string_view text, const std::string& origin = "<text>");
AttributeVocabulary load_vocabulary(const std::filesystem::path& path);

/// The bundled 105-label vocabulary (compiled in; identical to
/// data/default_vocabulary.tsv).
const AttributeVocabulary& default_vocabulary();
VocabularyPtr default_vocabulary_ptr();
std::string default_vocabulary_text();

/// Binary vector aligned to a vocabulary.
class AttributeVector {
 public:
  AttributeVector() = default;
  explicit AttributeVector(std::size_t length) : bits_(length, 0) {}
  explicit AttributeVector(std::vector<std::uint8_t> bits);

  std::size_t size() const { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  void set(std::size_t i, bool value) { bits_.at(i) = value ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::size_t popcount() const;

  std::string to_bitstring() const;
  static AttributeVector from_bitstring(std::string_view s);  // throws ParseError

  bool operator==(const AttributeVector&) const = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// bits[i] = 1 iff labels[i] is among `names`. Unknown label -> EncodingError.
AttributeVector encode(const std::vector<std::string>& names, const AttributeVocabulary& vocab);

/// Labels at set positions in vocabulary order. Length mismatch -> AlignmentError.
std::vector<std::string> decode(const AttributeVector& vec, const AttributeVocabulary& vocab);

/// Positions of every cloth-related label, ascending.
std::vector<std::size_t> cloth_indices(const AttributeVocabulary& vocab);

}  // namespace made
