#include "made/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "made/errors.hpp"
#include "made/kv.hpp"

namespace made {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'D', 'E', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string64(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw LoadError(path + ": truncated checkpoint");
  return v;
}

std::string get_string(std::istream& in, std::uint64_t len, const std::string& path) {
  if (len > (1ULL << 32)) throw LoadError(path + ": corrupt checkpoint (string too long)");
  std::string s(len, '\0');
  if (len && !in.read(s.data(), static_cast<std::streamsize>(len))) throw LoadError(path + ": truncated checkpoint");
  return s;
}

}  // namespace

std::string model_config_to_text(const ModelConfig& c) {
  std::ostringstream o;
  o << "height = " << c.height << '\n'
    << "width = " << c.width << '\n'
    << "patch_size = " << c.patch_size << '\n'
    << "embed_dim = " << c.embed_dim << '\n'
    << "num_heads = " << c.num_heads << '\n'
    << "mlp_hidden = " << c.mlp_hidden << '\n'
    << "stage_layers = " << kv::from_int_list({c.stage_layers.begin(), c.stage_layers.end()}) << '\n'
    << "desc_tokens = " << c.desc_tokens << '\n'
    << "vocab_size = " << c.vocab_size << '\n'
    << "num_classes = " << c.num_classes << '\n'
    << "use_description = " << (c.use_description ? "true" : "false") << '\n'
    << "null_description = " << (c.null_description == NullDescription::Learned ? "learned" : "zeros") << '\n'
    << "init_scale = " << kv::from_double(c.init_scale) << '\n'
    << "fused_gain = " << kv::from_double(c.fused_gain) << '\n';
  return o.str();
}

ModelConfig model_config_from_text(const std::string& text) {
  ModelConfig c;
  for (const auto& e : kv::parse(text, "<checkpoint config>")) {
    const auto& k = e.key;
    const auto& v = e.value;
    if (k == "height") c.height = kv::to_int(v, k);
    else if (k == "width") c.width = kv::to_int(v, k);
    else if (k == "patch_size") c.patch_size = kv::to_int(v, k);
    else if (k == "embed_dim") c.embed_dim = kv::to_int(v, k);
    else if (k == "num_heads") c.num_heads = kv::to_int(v, k);
    else if (k == "mlp_hidden") c.mlp_hidden = kv::to_int(v, k);
    else if (k == "stage_layers") {
      const auto l = kv::to_int_list(v, k);
      if (l.size() != 3) throw ConfigError("stage_layers needs three entries");
      c.stage_layers = {l[0], l[1], l[2]};
    } else if (k == "desc_tokens") c.desc_tokens = kv::to_int(v, k);
    else if (k == "vocab_size") c.vocab_size = kv::to_int(v, k);
    else if (k == "num_classes") c.num_classes = kv::to_int(v, k);
    else if (k == "use_description") c.use_description = kv::to_bool(v, k);
    else if (k == "null_description") {
      if (v == "zeros") c.null_description = NullDescription::Zeros;
      else if (v == "learned") c.null_description = NullDescription::Learned;
      else throw ConfigError("null_description must be 'zeros' or 'learned'");
    } else if (k == "init_scale") c.init_scale = kv::to_double(v, k);
    else if (k == "fused_gain") c.fused_gain = kv::to_double(v, k);
    else throw ConfigError("unknown model config key '" + k + "'");
  }
  c.validate();
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  // Write to a temporary name first so an interrupted write never replaces a
  // good checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put_string64(out, model_config_to_text(ckpt.config));
    put_string64(out, ckpt.vocabulary_text);
    put_string64(out, kv::from_int_list(ckpt.class_to_identity));
    std::vector<std::pair<std::string, const Mat*>> ts;
    ckpt.params.for_each([&](const std::string& n, const Mat& m) { ts.emplace_back(n, &m); });
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ts.size()));
    for (const auto& [name, m] : ts) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(m->rows()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(m->cols()));
      out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + p);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw LoadError(p + ": not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, p);
  if (version != kCheckpointVersion) throw LoadError(p + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config = model_config_from_text(get_string(in, get<std::uint64_t>(in, p), p));
  ck.vocabulary_text = get_string(in, get<std::uint64_t>(in, p), p);
  const auto classes = get_string(in, get<std::uint64_t>(in, p), p);
  if (!classes.empty()) ck.class_to_identity = kv::to_int_list(classes, "class_to_identity");

  std::map<std::string, Mat> stored;
  const auto count = get<std::uint32_t>(in, p);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = get_string(in, get<std::uint32_t>(in, p), p);
    const auto rows = get<std::uint32_t>(in, p);
    const auto cols = get<std::uint32_t>(in, p);
    Mat m(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw LoadError(p + ": truncated tensor '" + name + "'");
    }
    stored.emplace(name, std::move(m));
  }
  ck.params = init_params(ck.config, 0);
  ck.params.for_each([&](const std::string& n, Mat& m) {
    auto it = stored.find(n);
    if (it == stored.end()) throw LoadError(p + ": missing tensor '" + n + "'");
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw LoadError(p + ": tensor '" + n + "' has wrong shape");
    }
    m = it->second;
    stored.erase(it);
  });
  if (!stored.empty()) throw LoadError(p + ": unexpected tensor '" + stored.begin()->first + "'");
  return ck;
}

}  // namespace made
