#include "made/pipeline.hpp"

#include "made/errors.hpp"
#include "made/trainer.hpp"

namespace made {

std::vector<EvalEntry> eval_entries(const std::vector<SampleRecord>& records, const ModelParams& params,
                                    const ModelConfig& config) {
  const auto features = embed_records(records, params, config);
  std::vector<EvalEntry> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out[i].feature = features[i];
    out[i].identity_id = records[i].identity_id;
    out[i].camera_id = records[i].camera_id;
    out[i].clothes_id = records[i].clothes_id;
  }
  return out;
}

std::vector<Metrics> evaluate(const DatasetManifest& manifest, const ModelParams& params, const ModelConfig& config,
                              const std::vector<Setting>& settings) {
  const auto query = manifest.subset(Split::Query);
  const auto gallery = manifest.subset(Split::Gallery);
  if (query.empty() || gallery.empty()) throw ProtocolError("manifest has no query or gallery samples");
  const auto q = eval_entries(query, params, config);
  const auto g = eval_entries(gallery, params, config);
  std::vector<Metrics> out;
  for (auto s : settings) out.push_back(cmc_and_map(q, g, s));
  return out;
}

}  // namespace made
