#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "made/attribute_schema.hpp"
#include "made/dem.hpp"
#include "made/evalproto.hpp"
#include "made/synthdata.hpp"

namespace made {

struct RetentionOptions {
  /// A label counts as retained for an identity when at least this fraction
  /// of its images agree on the label's bit. 1.0 is the strict reading:
  /// identical across all images.
  double agreement = 1.0;
};

struct RetentionReport {
  std::string split;
  std::map<Category, double> ratio;  // cloth-irrelevant categories only
  std::map<int, std::map<Category, double>> per_identity;
  int identities = 0;
  int excluded_identities = 0;  // fewer than two images
};

RetentionReport retention(const std::vector<SampleRecord>& records, const AttributeSource& source,
                          const AttributeVocabulary& vocab, const std::string& split_name,
                          const RetentionOptions& options = {});

void write_retention_csv(const std::filesystem::path& path, const std::vector<RetentionReport>& reports);

struct AblationRow {
  std::string run;
  std::string setting;
  double rank1 = 0, rank5 = 0, rank10 = 0, mAP = 0;
  int evaluated = 0, skipped = 0;
};

struct AblationInput {
  std::string label;
  std::filesystem::path path;
};

/// "label=path" or plain path (label = name of the parent directory).
AblationInput parse_ablation_input(const std::string& arg);

/// Parses one metrics CSV; malformed content -> ParseError naming file and line.
std::vector<AblationRow> read_metrics_csv(const std::filesystem::path& path, const std::string& label);

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<std::filesystem::path> plots;
};

/// Merges runs keyed by (run label, setting), writes ablation.csv and PNG
/// plots of rank-1/mAP against the noise or mask ratio encoded in run labels
/// ("noise-0.10", "mask-0.30"); other labels are plotted by run order.
AblationReport ablation_report(const std::vector<AblationInput>& inputs, const std::filesystem::path& out_dir);

/// Ratio encoded in a run label with the given prefix ("noise" / "mask"), or
/// a negative value.
double label_ratio(const std::string& label, const std::string& prefix);

}  // namespace made
