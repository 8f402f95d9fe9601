#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "made/model.hpp"

namespace made {

struct EvalEntry {
  Vec feature;  // L2-normalised
  int identity_id = 0;
  int camera_id = 0;
  int clothes_id = 0;
};

enum class Setting { General, ClothChanging, SameClothes };

Setting parse_setting(const std::string& s);  // general | cc | sc
std::string setting_name(Setting s);

/// Gallery positions a query may be ranked against under `setting`.
/// Throws ProtocolError when nothing is left.
std::vector<int> valid_gallery(const EvalEntry& query, const std::vector<EvalEntry>& gallery, Setting setting);

/// Valid positions ordered by ascending cosine distance, ties by index.
std::vector<int> rank_list(const EvalEntry& query, const std::vector<EvalEntry>& gallery,
                           const std::vector<int>& valid);

/// Average precision of a ranked list given which positions are correct:
/// mean over the i-th correct item at 1-based rank r_i of i / r_i.
double average_precision(const std::vector<bool>& correct_in_rank_order);

struct Metrics {
  Setting setting = Setting::General;
  double rank1 = 0, rank5 = 0, rank10 = 0, mAP = 0;
  std::vector<double> cmc;  // cmc[k-1] = CMC@k, up to the largest gallery size
  std::vector<double> per_query_ap;  // evaluated queries only
  int evaluated = 0;
  int skipped = 0;
};

/// Queries without any valid same-identity gallery item (or without any
/// valid item at all) are skipped and counted. Zero evaluable queries ->
/// ProtocolError.
Metrics cmc_and_map(const std::vector<EvalEntry>& queries, const std::vector<EvalEntry>& gallery, Setting setting);

/// CSV: setting,rank1,rank5,rank10,mAP,evaluated,skipped (header + rows).
std::string metrics_csv_header();
std::string metrics_csv_row(const Metrics& m);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<Metrics>& rows);

}  // namespace made
