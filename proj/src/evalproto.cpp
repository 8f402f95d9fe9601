#include "made/evalproto.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "made/errors.hpp"

namespace made {

Setting parse_setting(const std::string& s) {
  if (s == "general") return Setting::General;
  if (s == "cc" || s == "cloth-changing") return Setting::ClothChanging;
  if (s == "sc" || s == "same-clothes") return Setting::SameClothes;
  throw ArgumentError("unknown setting '" + s + "' (expected general, cc or sc)");
}

std::string setting_name(Setting s) {
  switch (s) {
    case Setting::General: return "general";
    case Setting::ClothChanging: return "cc";
    case Setting::SameClothes: return "sc";
  }
  return "general";
}

std::vector<int> valid_gallery(const EvalEntry& q, const std::vector<EvalEntry>& gallery, Setting setting) {
  if (gallery.empty()) throw ProtocolError("empty gallery");
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(gallery.size()); ++i) {
    const auto& g = gallery[static_cast<std::size_t>(i)];
    if (g.identity_id != q.identity_id) {
      out.push_back(i);
      continue;
    }
    if (g.camera_id == q.camera_id) continue;
    if (setting == Setting::ClothChanging && g.clothes_id == q.clothes_id) continue;
    if (setting == Setting::SameClothes && g.clothes_id != q.clothes_id) continue;
    out.push_back(i);
  }
  if (out.empty()) {
    throw ProtocolError("no valid gallery items for query (identity " + std::to_string(q.identity_id) +
                        ", camera " + std::to_string(q.camera_id) + ", clothes " + std::to_string(q.clothes_id) +
                        ")");
  }
  return out;
}

std::vector<int> rank_list(const EvalEntry& q, const std::vector<EvalEntry>& gallery, const std::vector<int>& valid) {
  std::vector<std::pair<double, int>> scored;
  scored.reserve(valid.size());
  for (int i : valid) scored.emplace_back(1.0 - q.feature.dot(gallery[static_cast<std::size_t>(i)].feature), i);
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });
  std::vector<int> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.second);
  return out;
}

double average_precision(const std::vector<bool>& correct) {
  double sum = 0.0;
  int hits = 0;
  for (std::size_t r = 0; r < correct.size(); ++r) {
    if (!correct[r]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return hits == 0 ? 0.0 : sum / hits;
}

Metrics cmc_and_map(const std::vector<EvalEntry>& queries, const std::vector<EvalEntry>& gallery, Setting setting) {
  Metrics m;
  m.setting = setting;
  m.cmc.assign(gallery.size(), 0.0);
  for (const auto& q : queries) {
    std::vector<int> valid;
    try {
      valid = valid_gallery(q, gallery, setting);
    } catch (const ProtocolError&) {
      ++m.skipped;
      continue;
    }
    const auto ranked = rank_list(q, gallery, valid);
    std::vector<bool> correct(ranked.size());
    int first = -1;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      correct[r] = gallery[static_cast<std::size_t>(ranked[r])].identity_id == q.identity_id;
      if (correct[r] && first < 0) first = static_cast<int>(r);
    }
    if (first < 0) {
      ++m.skipped;
      continue;
    }
    ++m.evaluated;
    for (std::size_t k = static_cast<std::size_t>(first); k < m.cmc.size(); ++k) m.cmc[k] += 1.0;
    m.per_query_ap.push_back(average_precision(correct));
  }
  if (m.evaluated == 0) throw ProtocolError("no evaluable queries for setting " + setting_name(setting));
  for (auto& v : m.cmc) v /= m.evaluated;
  auto at = [&](std::size_t k) { return m.cmc.empty() ? 0.0 : m.cmc[std::min(k, m.cmc.size()) - 1]; };
  m.rank1 = at(1);
  m.rank5 = at(5);
  m.rank10 = at(10);
  m.mAP = std::accumulate(m.per_query_ap.begin(), m.per_query_ap.end(), 0.0) / m.evaluated;
  return m;
}

std::string metrics_csv_header() { return "setting,rank1,rank5,rank10,mAP,evaluated,skipped"; }

std::string metrics_csv_row(const Metrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%d,%d", setting_name(m.setting).c_str(), m.rank1, m.rank5,
                m.rank10, m.mAP, m.evaluated, m.skipped);
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<Metrics>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << metrics_csv_header() << '\n';
  for (const auto& m : rows) out << metrics_csv_row(m) << '\n';
}

}  // namespace made
