#pragma once

#include <vector>

#include "made/model.hpp"

namespace made {

struct LossConfig {
  double lambda_id = 1.0;
  double lambda_tri = 1.0;
  double margin = 0.3;  // not given by the source method; configurable

  void validate() const;  // throws ConfigError
};

/// Mean over the batch of -log softmax(logits)[label]. Rows of `logits` are
/// samples. If `d_logits` is given it receives dLoss/dlogits.
double id_loss(const Mat& logits, const std::vector<int>& labels, Mat* d_logits = nullptr);

/// max{0, M + |a-p|^2 - |a-n|^2}.
double triplet_loss(const Vec& anchor, const Vec& positive, const Vec& negative, double margin);

/// Squared Euclidean distance matrix between the rows of `features`.
Mat pairwise_sq_distances(const Mat& features);

struct MinedTriplet {
  int anchor, positive, negative;
};

/// Per anchor: farthest same-label sample and nearest other-label sample.
/// Ties resolve to the lowest index. Throws MiningError when a label has a
/// single sample.
std::vector<MinedTriplet> mine_batch_hard(const Mat& features, const std::vector<int>& labels);

/// Mean of triplet_loss over the batch-hard triplets.
double batch_hard_triplet(const Mat& features, const std::vector<int>& labels, double margin,
                          Mat* d_features = nullptr);

struct LossBreakdown {
  double id = 0.0;
  double triplet = 0.0;
  double total = 0.0;
};

/// lambda_id * id_loss + lambda_tri * batch_hard_triplet. Terms with zero
/// weight are still reported.
LossBreakdown total_loss(const Mat& logits, const Mat& features, const std::vector<int>& labels,
                         const LossConfig& config, Mat* d_logits = nullptr, Mat* d_features = nullptr);

}  // namespace made
