#pragma once

#include <vector>

#include "made/evalproto.hpp"
#include "made/model.hpp"
#include "made/synthdata.hpp"

namespace made {

std::vector<EvalEntry> eval_entries(const std::vector<SampleRecord>& records, const ModelParams& params,
                                    const ModelConfig& config);

/// Embeds the query and gallery splits once and scores every requested setting.
std::vector<Metrics> evaluate(const DatasetManifest& manifest, const ModelParams& params, const ModelConfig& config,
                              const std::vector<Setting>& settings);

}  // namespace made
