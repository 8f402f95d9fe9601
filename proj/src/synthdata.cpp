#include "made/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "made/errors.hpp"
#include "made/rng.hpp"

namespace made {

namespace {

constexpr std::array<std::array<int, 3>, 11> kColors = {{
    {20, 20, 20},    // black
    {235, 235, 235}, // white
    {128, 128, 128}, // grey
    {200, 30, 30},   // red
    {30, 160, 40},   // green
    {30, 60, 200},   // blue
    {230, 210, 40},  // yellow
    {120, 70, 30},   // brown
    {120, 40, 160},  // purple
    {240, 130, 180}, // pink
    {245, 140, 20},  // orange
}};

std::array<int, 3> color_of(int value) { return kColors[static_cast<std::size_t>(value) % kColors.size()]; }

std::array<int, 3> hashed_color(std::uint64_t key) {
  const auto h = mix64(key);
  return {static_cast<int>(h & 0xff), static_cast<int>((h >> 8) & 0xff), static_cast<int>((h >> 16) & 0xff)};
}

int clamp_byte(int v) { return std::clamp(v, 0, 255); }

// Stripe pattern selected by a type index; returns a signed shade offset.
int type_shade(int type, int y, int x) {
  const int period = 2 + type % 3;
  int coord = 0;
  switch ((type / 3) % 4) {
    case 0: coord = y; break;
    case 1: coord = x; break;
    case 2: coord = x + y; break;
    default: coord = x + 2 * y; break;
  }
  if (type % 5 == 4) return 0;  // plain
  return ((coord / period) % 2) ? 40 : -40;
}

void fill_region(Image& img, const Region& r, const std::array<int, 3>& rgb, int type = -1) {
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) {
      const int shade = type >= 0 ? type_shade(type, y - r.y0, x - r.x0) : 0;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(clamp_byte(rgb[c] + shade));
    }
  }
}

int value_or(const std::map<Category, int>& m, Category c, int fallback = 0) {
  auto it = m.find(c);
  return it == m.end() ? fallback : it->second;
}

std::vector<Category> cloth_irrelevant_categories(const AttributeVocabulary& vocab) {
  std::vector<Category> out;
  for (auto c : vocab.categories()) {
    if (!is_cloth_category(c)) out.push_back(c);
  }
  return out;
}

std::string trim_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

int parse_int_field(const std::string& s, const std::string& where, const char* field) {
  try {
    std::size_t used = 0;
    int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw LoadError(where + ": field '" + field + "' is not an integer: '" + s + "'");
  }
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Query: return "query";
    case Split::Gallery: return "gallery";
  }
  return "train";
}

Split SampleRecord::split() const {
  if (sample_id.rfind("query-", 0) == 0) return Split::Query;
  if (sample_id.rfind("gallery-", 0) == 0) return Split::Gallery;
  return Split::Train;
}

std::vector<SampleRecord> DatasetManifest::subset(Split s) const {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    if (r.split() == s) out.push_back(r);
  }
  return out;
}

MapAttributeSource DatasetManifest::attribute_source() const {
  MapAttributeSource src;
  for (const auto& r : records) src.add(r.sample_id, r.attrs);
  return src;
}

int GenConfig::resolved_train_identities() const {
  return train_identities >= 0 ? train_identities : (num_identities + 1) / 2;
}

double GenConfig::retention_of(Category c) const {
  auto it = retention.find(c);
  return it == retention.end() ? retention_default : it->second;
}

void GenConfig::validate(const AttributeVocabulary& vocab) const {
  auto fail = [](const std::string& m) { throw ConfigError("gen config: " + m); };
  if (num_identities < 1) fail("num_identities must be >= 1");
  if (resolved_train_identities() > num_identities) fail("train_identities exceeds num_identities");
  if (outfits_per_identity < 1) fail("outfits_per_identity must be >= 1");
  if (images_per_outfit < 1) fail("images_per_outfit must be >= 1");
  if (num_cameras < 1) fail("num_cameras must be >= 1");
  if (height < 8 || width < 8) fail("image size must be at least 8x8");
  if (patch_size < 1 || height % patch_size != 0 || width % patch_size != 0) {
    fail("image size " + std::to_string(height) + "x" + std::to_string(width) +
         " is not divisible by patch size " + std::to_string(patch_size));
  }
  if (cloth_palette < outfits_per_identity) fail("cloth_palette must be >= outfits_per_identity");
  for (auto c : {Category::UpperBodyColor, Category::LowerBodyColor}) {
    const auto n = vocab.indices_of(c).size();
    if (n != 0 && static_cast<std::size_t>(cloth_palette) > n) {
      fail("cloth_palette exceeds the number of " + std::string(category_name(c)) + " labels");
    }
  }
  if (texture_strength < 0 || jitter < 0) fail("texture_strength and jitter must be >= 0");
  if (!(retention_default >= 0.0 && retention_default <= 1.0)) fail("retention probabilities must lie in [0,1]");
  for (const auto& [c, r] : retention) {
    if (is_cloth_category(c)) fail("retention is only defined for cloth-irrelevant categories");
    if (!(r >= 0.0 && r <= 1.0)) fail("retention probabilities must lie in [0,1]");
  }
}

RenderLayout RenderLayout::for_size(int h, int w) {
  const int q = h / 4;
  const int s = w / 8;
  RenderLayout l{};
  l.head = {0, q, 2 * s, w - 2 * s};
  l.torso = {q, 2 * q, 2 * s, w - 2 * s};
  l.legs = {2 * q, 3 * q, 2 * s, w - 2 * s};
  l.feet = {3 * q, h, 2 * s, w - 2 * s};
  l.texture_left = {0, h, 0, s};
  l.texture_right = {0, h, w - s, w};
  l.orientation_mark = {0, q, s, 2 * s};
  l.carried_item = {q, 3 * q, w - 2 * s, w - s};
  return l;
}

Image render(const IdentitySpec& identity, const OutfitSpec& outfit, int camera_id,
             std::uint64_t jitter_seed, const GenConfig& config) {
  const int h = config.height, w = config.width;
  const auto L = RenderLayout::for_size(h, w);
  Image img(h, w, 128);

  // Head: hair tone from gender, face brightness from age.
  const int gender = value_or(identity.values, Category::Gender);
  const int age = value_or(identity.values, Category::Age);
  const Region hair{L.head.y0, L.head.y0 + (L.head.y1 - L.head.y0) / 2, L.head.x0, L.head.x1};
  const Region face{hair.y1, L.head.y1, L.head.x0, L.head.x1};
  const std::array<int, 3> hair_rgb = gender == 0 ? std::array<int, 3>{50, 35, 25}
                                                  : std::array<int, 3>{170, 110, 60};
  fill_region(img, hair, {hair_rgb[0] + 18 * age, hair_rgb[1] + 18 * age, hair_rgb[2] + 18 * age});
  fill_region(img, face, {235 - 20 * age, 190 - 20 * age, 160 - 20 * age});

  fill_region(img, L.torso, color_of(value_or(outfit.values, Category::UpperBodyColor)),
              value_or(outfit.values, Category::UpperBodyType));
  fill_region(img, L.legs, color_of(value_or(outfit.values, Category::LowerBodyColor)),
              value_or(outfit.values, Category::LowerBodyType));
  fill_region(img, L.feet, color_of(value_or(identity.values, Category::ShoeColor)),
              value_or(identity.values, Category::ShoeType));
  fill_region(img, L.carried_item,
              hashed_color(0xca77ULL + static_cast<std::uint64_t>(value_or(identity.values, Category::CarriedItems))));

  // Orientation: one bright row band whose position encodes the value.
  {
    const int o = value_or(identity.values, Category::Orientation);
    const int span = std::max(1, (L.orientation_mark.y1 - L.orientation_mark.y0) / 4);
    fill_region(img, L.orientation_mark, {90, 90, 90});
    const int y0 = L.orientation_mark.y0 + (o % 4) * span;
    fill_region(img, {y0, std::min(y0 + span, L.orientation_mark.y1), L.orientation_mark.x0,
                      L.orientation_mark.x1},
                {230, 230, 230});
  }

  // Identity texture: 2x2 cells hashed from the texture seed.
  for (const Region& r : {L.texture_left, L.texture_right}) {
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        for (int c = 0; c < 3; ++c) {
          const auto key = identity.texture_seed ^ mix64((static_cast<std::uint64_t>(y / 2) << 32) |
                                                         (static_cast<std::uint64_t>(x / 2) << 8) |
                                                         static_cast<std::uint64_t>(c));
          const double u = static_cast<double>(mix64(key) >> 11) * 0x1.0p-53;
          img.at(y, x, c) = static_cast<std::uint8_t>(
              clamp_byte(128 + static_cast<int>(std::lround((2.0 * u - 1.0) * config.texture_strength))));
        }
      }
    }
  }

  // Camera response, then sensor jitter.
  const int brightness = (static_cast<int>((camera_id * 37) % 7) - 3) * 8;
  const double contrast = 1.0 + (static_cast<int>((camera_id * 53) % 5) - 2) * 0.06;
  Rng rng(jitter_seed);
  const auto span = static_cast<std::uint64_t>(2 * config.jitter + 1);
  for (auto& p : img.pixels) {
    const double v = contrast * (static_cast<double>(p) - 128.0) + 128.0 + brightness;
    const int noise = config.jitter > 0 ? static_cast<int>(uniform_index(rng, span)) - config.jitter : 0;
    p = static_cast<std::uint8_t>(clamp_byte(static_cast<int>(std::lround(v)) + noise));
  }
  return img;
}

std::uint64_t jitter_seed_for(std::uint64_t seed, std::size_t record_index) {
  return derive_seed(seed, "jitter", record_index);
}

GeneratedDataset sample_dataset(const GenConfig& config, const AttributeVocabulary& vocab) {
  config.validate(vocab);
  Rng rng = make_rng(config.seed, "data");
  GeneratedDataset ds;
  const int n_train = config.resolved_train_identities();
  const auto irrelevant = cloth_irrelevant_categories(vocab);

  for (int i = 0; i < config.num_identities; ++i) {
    IdentitySpec id;
    id.identity_id = i;
    for (auto c : irrelevant) {
      id.values[c] = static_cast<int>(uniform_index(rng, vocab.indices_of(c).size()));
    }
    id.texture_seed = derive_seed(config.seed, "texture", static_cast<std::uint64_t>(i));
    ds.identities.push_back(id);

    // Upper-body colors never repeat within one identity, so torso color can
    // only ever point at other identities across outfits.
    const auto upper = sample_without_replacement(rng, static_cast<std::size_t>(config.cloth_palette),
                                                  static_cast<std::size_t>(config.outfits_per_identity));
    std::vector<OutfitSpec> outfits;
    for (int o = 0; o < config.outfits_per_identity; ++o) {
      OutfitSpec of;
      of.clothes_id = o;
      for (auto c : vocab.categories()) {
        if (!is_cloth_category(c)) continue;
        const auto n = vocab.indices_of(c).size();
        if (c == Category::UpperBodyColor) {
          of.values[c] = static_cast<int>(upper[static_cast<std::size_t>(o)]);
        } else if (c == Category::LowerBodyColor) {
          of.values[c] = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(config.cloth_palette)));
        } else {
          of.values[c] = static_cast<int>(uniform_index(rng, n));
        }
      }
      outfits.push_back(of);
    }
    ds.outfits.push_back(outfits);
  }

  // Records in (identity, outfit, camera, image) order. Outfit o is queried
  // from camera o mod C; with only two cameras that would put every
  // cross-clothes gallery image on the query's own camera, so camera 0 holds
  // all queries instead.
  auto query_camera = [&](int o) { return config.num_cameras >= 3 ? o % config.num_cameras : 0; };
  std::vector<std::vector<std::size_t>> records_of(static_cast<std::size_t>(config.num_identities));
  int train_counter = 0, query_counter = 0, gallery_counter = 0;
  char buf[32];
  for (int i = 0; i < config.num_identities; ++i) {
    for (int o = 0; o < config.outfits_per_identity; ++o) {
      for (int cam = 0; cam < config.num_cameras; ++cam) {
        for (int k = 0; k < config.images_per_outfit; ++k) {
          SampleRecord r;
          if (i < n_train) {
            std::snprintf(buf, sizeof buf, "train-%06d", train_counter++);
          } else if (cam == query_camera(o)) {
            std::snprintf(buf, sizeof buf, "query-%06d", query_counter++);
          } else {
            std::snprintf(buf, sizeof buf, "gallery-%06d", gallery_counter++);
          }
          r.sample_id = buf;
          r.image_path = std::filesystem::path("images") / (r.sample_id + ".png");
          r.identity_id = i;
          r.camera_id = cam;
          r.clothes_id = o;

          AttributeVector bits(vocab.size());
          const auto& id = ds.identities[static_cast<std::size_t>(i)];
          const auto& of = ds.outfits[static_cast<std::size_t>(i)][static_cast<std::size_t>(o)];
          for (auto c : vocab.categories()) {
            const auto idx = vocab.indices_of(c);
            const int v = is_cloth_category(c) ? of.values.at(c) : id.values.at(c);
            bits.set(idx[static_cast<std::size_t>(v)], true);
          }
          r.attrs = std::move(bits);
          records_of[static_cast<std::size_t>(i)].push_back(ds.manifest.records.size());
          ds.manifest.records.push_back(std::move(r));
        }
      }
    }
  }

  // Observation instability: per split and cloth-irrelevant category, an
  // exact fraction (1 - retention) of (identity, label) pairs is unstable.
  // An unstable label takes random values per image and is guaranteed not to
  // be constant over the identity's images.
  const int per_identity = config.outfits_per_identity * config.num_cameras * config.images_per_outfit;
  if (per_identity >= 2) {
    for (int group = 0; group < 2; ++group) {
      const int first = group == 0 ? 0 : n_train;
      const int last = group == 0 ? n_train : config.num_identities;
      const auto n_ids = static_cast<std::size_t>(last - first);
      if (n_ids == 0) continue;
      for (auto c : irrelevant) {
        const auto labels = vocab.indices_of(c);
        const auto pairs = n_ids * labels.size();
        const auto unstable = static_cast<std::size_t>(
            std::llround((1.0 - config.retention_of(c)) * static_cast<double>(pairs)));
        for (auto p : sample_without_replacement(rng, pairs, unstable)) {
          const auto ident = static_cast<std::size_t>(first) + p / labels.size();
          const auto label = labels[p % labels.size()];
          const auto& recs = records_of[ident];
          std::vector<std::uint8_t> vals(recs.size());
          for (auto& v : vals) v = coin(rng) ? 1 : 0;
          if (std::all_of(vals.begin(), vals.end(), [&](auto v) { return v == vals.front(); })) {
            auto j = uniform_index(rng, vals.size());
            vals[j] ^= 1;
          }
          for (std::size_t j = 0; j < recs.size(); ++j) {
            ds.manifest.records[recs[j]].attrs.set(label, vals[j] != 0);
          }
        }
      }
    }
  }
  return ds;
}

double analytic_retention(const GenConfig& config, const AttributeVocabulary& vocab, Category c,
                          Split split) {
  const int n_train = config.resolved_train_identities();
  const auto n_ids = static_cast<double>(split == Split::Train ? n_train : config.num_identities - n_train);
  const auto labels = static_cast<double>(vocab.indices_of(c).size());
  const double pairs = n_ids * labels;
  if (pairs == 0) throw ArgumentError("no identities or labels for retention");
  const double unstable = static_cast<double>(std::llround((1.0 - config.retention_of(c)) * pairs));
  return 1.0 - unstable / pairs;
}

DatasetManifest generate(const GenConfig& config, const AttributeVocabulary& vocab,
                         const std::filesystem::path& out_dir) {
  auto ds = sample_dataset(config, vocab);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  for (std::size_t idx = 0; idx < ds.manifest.records.size(); ++idx) {
    auto& r = ds.manifest.records[idx];
    const auto& id = ds.identities[static_cast<std::size_t>(r.identity_id)];
    const auto& of = ds.outfits[static_cast<std::size_t>(r.identity_id)][static_cast<std::size_t>(r.clothes_id)];
    write_png(out_dir / r.image_path, render(id, of, r.camera_id, jitter_seed_for(config.seed, idx), config));
  }
  write_manifest(out_dir / "manifest.tsv", ds.manifest);
  for (auto& r : ds.manifest.records) r.image_path = out_dir / r.image_path;
  return ds.manifest;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  const auto base = path.parent_path();
  out << "# sample_id\timage_path\tidentity_id\tcamera_id\tclothes_id\tattributes\n";
  for (const auto& r : manifest.records) {
    auto p = r.image_path;
    if (p.is_absolute() || (!base.empty() && p.native().rfind(base.native(), 0) == 0)) {
      p = std::filesystem::relative(p, base.empty() ? "." : base);
    }
    out << r.sample_id << '\t' << p.generic_string() << '\t' << r.identity_id << '\t' << r.camera_id
        << '\t' << r.clothes_id << '\t' << r.attrs.to_bitstring() << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                               const AttributeVocabulary& vocab, const std::string& origin,
                               bool check_images) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim_cr(line);
    if (line.empty() || line.front() == '#') continue;
    const auto where = origin + ":" + std::to_string(line_no);
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 6) {
      throw LoadError(where + ": expected 6 tab-separated fields, found " + std::to_string(f.size()));
    }
    SampleRecord r;
    r.sample_id = f[0];
    if (r.sample_id.empty()) throw LoadError(where + ": empty sample_id");
    r.image_path = std::filesystem::path(f[1]);
    if (r.image_path.is_relative()) r.image_path = base_dir / r.image_path;
    r.identity_id = parse_int_field(f[2], where, "identity_id");
    r.camera_id = parse_int_field(f[3], where, "camera_id");
    r.clothes_id = parse_int_field(f[4], where, "clothes_id");
    try {
      r.attrs = AttributeVector::from_bitstring(f[5]);
    } catch (const ParseError& e) {
      throw LoadError(where + ": " + e.what());
    }
    if (r.attrs.size() != vocab.size()) {
      throw LoadError(where + ": attribute bitstring has length " + std::to_string(r.attrs.size()) +
                      ", vocabulary has " + std::to_string(vocab.size()));
    }
    if (check_images && !std::filesystem::exists(r.image_path)) {
      throw LoadError(where + ": missing image " + r.image_path.string());
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path, const AttributeVocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path(), vocab, path.string());
}

}  // namespace made
