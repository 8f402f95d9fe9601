#include "made/analyzer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "made/errors.hpp"
#include "made/plot.hpp"

namespace made {

RetentionReport retention(const std::vector<SampleRecord>& records, const AttributeSource& source,
                          const AttributeVocabulary& vocab, const std::string& split_name,
                          const RetentionOptions& options) {
  if (!(options.agreement > 0.5 && options.agreement <= 1.0)) {
    throw ArgumentError("retention agreement must lie in (0.5, 1]");
  }
  RetentionReport rep;
  rep.split = split_name;

  std::map<int, std::vector<const AttributeVector*>> by_id;
  for (const auto& r : records) {
    const auto& v = source.lookup(r.sample_id);
    if (v.size() != vocab.size()) throw AlignmentError("attributes of " + r.sample_id + " do not match vocabulary");
    by_id[r.identity_id].push_back(&v);
  }

  std::vector<Category> cats;
  for (auto c : vocab.categories()) {
    if (!is_cloth_category(c)) cats.push_back(c);
  }
  std::map<Category, std::pair<double, double>> totals;  // retained, count
  for (const auto& [id, vecs] : by_id) {
    if (vecs.size() < 2) {
      ++rep.excluded_identities;
      continue;
    }
    ++rep.identities;
    for (auto c : cats) {
      const auto labels = vocab.indices_of(c);
      double retained = 0;
      for (auto j : labels) {
        std::size_t ones = 0;
        for (const auto* v : vecs) ones += (*v)[j];
        const auto modal = std::max(ones, vecs.size() - ones);
        const double agree = static_cast<double>(modal) / static_cast<double>(vecs.size());
        if (options.agreement >= 1.0 ? modal == vecs.size() : agree >= options.agreement) retained += 1;
      }
      rep.per_identity[id][c] = retained / static_cast<double>(labels.size());
      totals[c].first += retained;
      totals[c].second += static_cast<double>(labels.size());
    }
  }
  for (auto c : cats) {
    const auto& t = totals[c];
    rep.ratio[c] = t.second > 0 ? t.first / t.second : 0.0;
  }
  return rep;
}

void write_retention_csv(const std::filesystem::path& path, const std::vector<RetentionReport>& reports) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "split,category,retention,identities,excluded_identities\n";
  for (const auto& r : reports) {
    for (const auto& [c, v] : r.ratio) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", v);
      out << r.split << ',' << category_name(c) << ',' << buf << ',' << r.identities << ','
          << r.excluded_identities << '\n';
    }
  }
}

AblationInput parse_ablation_input(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq != std::string::npos && eq > 0) return {arg.substr(0, eq), arg.substr(eq + 1)};
  std::filesystem::path p(arg);
  auto label = p.parent_path().filename().string();
  if (label.empty() || label == ".") label = p.stem().string();
  return {label, p};
}

std::vector<AblationRow> read_metrics_csv(const std::filesystem::path& path, const std::string& label) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open metrics file " + path.string());
  std::vector<AblationRow> rows;
  std::string line;
  std::size_t n = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(n);
    if (!header) {
      if (line != metrics_csv_header()) throw ParseError(where + ": unexpected header '" + line + "'");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 7) throw ParseError(where + ": expected 7 fields, found " + std::to_string(f.size()));
    AblationRow r;
    r.run = label;
    r.setting = f[0];
    try {
      std::size_t used = 0;
      auto num = [&](const std::string& s) {
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      };
      r.rank1 = num(f[1]);
      r.rank5 = num(f[2]);
      r.rank10 = num(f[3]);
      r.mAP = num(f[4]);
      r.evaluated = static_cast<int>(num(f[5]));
      r.skipped = static_cast<int>(num(f[6]));
    } catch (const std::exception&) {
      throw ParseError(where + ": malformed numeric field");
    }
    parse_setting(r.setting);
    rows.push_back(r);
  }
  if (!header) throw ParseError(path.string() + ":1: missing header");
  return rows;
}

double label_ratio(const std::string& label, const std::string& prefix) {
  const auto p = prefix + "-";
  if (label.rfind(p, 0) != 0) return -1.0;
  try {
    std::size_t used = 0;
    const auto s = label.substr(p.size());
    const double v = std::stod(s, &used);
    return used == s.size() ? v : -1.0;
  } catch (const std::exception&) {
    return -1.0;
  }
}

AblationReport ablation_report(const std::vector<AblationInput>& inputs, const std::filesystem::path& out_dir) {
  if (inputs.empty()) throw ArgumentError("ablation report needs at least one input");
  std::set<std::string> labels;
  for (const auto& in : inputs) {
    if (!labels.insert(in.label).second) {
      throw ArgumentError("duplicate run label '" + in.label + "' (" + in.path.string() + ")");
    }
  }
  AblationReport rep;
  for (const auto& in : inputs) {
    auto rows = read_metrics_csv(in.path, in.label);
    rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
  }

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "ablation.csv");
    if (!out) throw IoError("cannot write " + (out_dir / "ablation.csv").string());
    out << "run,setting,rank1,rank5,rank10,mAP,evaluated,skipped\n";
    for (const auto& r : rep.rows) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%d,%d", r.rank1, r.rank5, r.rank10, r.mAP, r.evaluated,
                    r.skipped);
      out << r.run << ',' << r.setting << ',' << buf << '\n';
    }
  }

  // One chart per axis, drawn from the cloth-changing rows when present.
  std::set<std::string> settings;
  for (const auto& r : rep.rows) settings.insert(r.setting);
  const std::string setting = settings.count("cc") ? "cc" : rep.rows.front().setting;

  struct Axis {
    std::string prefix, file;
  };
  std::vector<Axis> axes = {{"noise", "rank1_map_vs_noise.png"}, {"mask", "rank1_map_vs_mask.png"}};
  bool plotted_any = false;
  auto emit = [&](std::vector<std::pair<double, const AblationRow*>> pts, const std::string& file) {
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    Series r1{{}, {}, {200, 30, 30}}, map{{}, {}, {30, 60, 200}};
    for (const auto& [x, row] : pts) {
      r1.x.push_back(x);
      r1.y.push_back(row->rank1);
      map.x.push_back(x);
      map.y.push_back(row->mAP);
    }
    const auto path = out_dir / file;
    write_png(path, line_chart({r1, map}, 0.0, 1.0));
    rep.plots.push_back(path);
  };
  for (const auto& axis : axes) {
    std::vector<std::pair<double, const AblationRow*>> pts;
    for (const auto& r : rep.rows) {
      const double x = label_ratio(r.run, axis.prefix);
      if (r.setting == setting && x >= 0) pts.emplace_back(x, &r);
    }
    if (pts.empty()) continue;
    emit(std::move(pts), axis.file);
    plotted_any = true;
  }
  if (!plotted_any) {
    std::vector<std::pair<double, const AblationRow*>> pts;
    int i = 0;
    for (const auto& r : rep.rows) {
      if (r.setting == setting) pts.emplace_back(static_cast<double>(i++), &r);
    }
    emit(std::move(pts), "rank1_map_by_run.png");
  }
  return rep;
}

}  // namespace made
