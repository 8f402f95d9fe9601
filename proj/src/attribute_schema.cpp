#include "made/attribute_schema.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "made/errors.hpp"

namespace made {

namespace {

constexpr std::array<std::string_view, 10> kCategoryNames = {
    "gender",           "age",             "orientation", "carried-items",
    "upper-body-color", "upper-body-type", "lower-body-color", "lower-body-type",
    "shoe-color",       "shoe-type",
};

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string_view category_name(Category c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

Category parse_category(std::string_view name) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
    if (kCategoryNames[i] == name) return static_cast<Category>(i);
  }
  throw SchemaError("unknown attribute category '" + std::string(name) + "'");
}

bool is_cloth_category(Category c) {
  switch (c) {
    case Category::UpperBodyColor:
    case Category::UpperBodyType:
    case Category::LowerBodyColor:
    case Category::LowerBodyType:
      return true;
    default:
      return false;
  }
}

AttributeVocabulary::AttributeVocabulary(std::vector<Entry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw SchemaError("attribute vocabulary is empty");
  index_.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& label = entries_[i].label;
    if (label.empty()) throw SchemaError("empty attribute label at position " + std::to_string(i));
    if (!index_.emplace(label, i).second) {
      throw SchemaError("duplicate attribute label '" + label + "'");
    }
  }
}

long AttributeVocabulary::index_of(std::string_view label) const {
  auto it = index_.find(std::string(label));
  return it == index_.end() ? -1 : static_cast<long>(it->second);
}

std::vector<std::size_t> AttributeVocabulary::indices_of(Category c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].category == c) out.push_back(i);
  }
  return out;
}

std::vector<Category> AttributeVocabulary::categories() const {
  std::vector<Category> out;
  for (Category c : kAllCategories) {
    if (std::any_of(entries_.begin(), entries_.end(),
                    [c](const Entry& e) { return e.category == c; })) {
      out.push_back(c);
    }
  }
  return out;
}

bool AttributeVocabulary::operator==(const AttributeVocabulary& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (entries_[i].label != other.entries_[i].label ||
        entries_[i].category != other.entries_[i].category) {
      return false;
    }
  }
  return true;
}

AttributeVocabulary parse_vocabulary(std::string_view text, const std::string& origin) {
  std::vector<AttributeVocabulary::Entry> entries;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto tab = t.find('\t');
    if (tab == std::string_view::npos) {
      throw SchemaError(origin + ":" + std::to_string(line_no) + ": expected 'label<TAB>category'");
    }
    auto label = trim(t.substr(0, tab));
    auto cat = trim(t.substr(tab + 1));
    try {
      entries.push_back({std::string(label), parse_category(cat)});
    } catch (const SchemaError& e) {
      throw SchemaError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (entries.empty()) throw SchemaError(origin + ": attribute vocabulary is empty");
  try {
    return AttributeVocabulary(std::move(entries));
  } catch (const SchemaError& e) {
    throw SchemaError(origin + ": " + e.what());
  }
}

AttributeVocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open vocabulary file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_vocabulary(ss.str(), path.string());
}

const AttributeVocabulary& default_vocabulary() {
  static const AttributeVocabulary vocab =
      parse_vocabulary(default_vocabulary_text(), "<default vocabulary>");
  return vocab;
}

VocabularyPtr default_vocabulary_ptr() {
  static const VocabularyPtr ptr(&default_vocabulary(), [](const AttributeVocabulary*) {});
  return ptr;
}

AttributeVector::AttributeVector(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw ArgumentError("attribute vector elements must be 0 or 1");
  }
}

std::size_t AttributeVector::popcount() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::string AttributeVector::to_bitstring() const {
  std::string s(bits_.size(), '0');
  for (std::size_t i = 0; i < bits_.size(); ++i) s[i] = bits_[i] ? '1' : '0';
  return s;
}

AttributeVector AttributeVector::from_bitstring(std::string_view s) {
  std::vector<std::uint8_t> bits(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '0' && s[i] != '1') {
      throw ParseError("invalid character in bitstring at position " + std::to_string(i));
    }
    bits[i] = s[i] == '1';
  }
  return AttributeVector(std::move(bits));
}

AttributeVector encode(const std::vector<std::string>& names, const AttributeVocabulary& vocab) {
  AttributeVector out(vocab.size());
  for (const auto& n : names) {
    const long i = vocab.index_of(n);
    if (i < 0) throw EncodingError("unknown attribute label '" + n + "'");
    out.set(static_cast<std::size_t>(i), true);
  }
  return out;
}

std::vector<std::string> decode(const AttributeVector& vec, const AttributeVocabulary& vocab) {
  if (vec.size() != vocab.size()) {
    throw AlignmentError("attribute vector length " + std::to_string(vec.size()) +
                         " does not match vocabulary size " + std::to_string(vocab.size()));
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < vec.size(); ++i) {
    if (vec[i]) out.push_back(vocab.label(i));
  }
  return out;
}

std::vector<std::size_t> cloth_indices(const AttributeVocabulary& vocab) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab.cloth_related(i)) out.push_back(i);
  }
  return out;
}

}  // namespace made
