#pragma once

#include "kafuse/dataset.hpp"
#include "kafuse/solver.hpp"
#include "kafuse/types.hpp"

#include <cstdint>
#include <vector>

namespace kafuse {

struct ClusteringResult {
  LabelVector assignment;  // 1..m
  Matrix centroids;        // p x m
  double inertia = 0;
  int iterations = 0;
};

// k-means on the columns of x (p x n): k-means++ seeding, Lloyd iterations
// until the assignment is stable or max_iter. An empty cluster is reseeded
// with the point farthest from its centroid.
ClusteringResult kmeans(const Matrix& x, Index m, std::uint64_t seed, int max_iter = 300);

// Best one-to-one label mapping (Hungarian), fraction of matches.
double accuracy(const LabelVector& truth, const LabelVector& predicted);

// Mutual information over the geometric mean of the entropies, natural log.
// A partition with a single block gives 0 unless both are identical.
double nmi(const LabelVector& a, const LabelVector& b);

// Maximum-weight perfect assignment on a square matrix; result[row] = column.
std::vector<Index> max_weight_assignment(const Matrix& weight);

struct EvaluationReport {
  double acc_mean = 0;  // percent
  double acc_std = 0;
  double nmi_mean = 0;
  double nmi_std = 0;
  int runs = 0;
  double feature_ratio = 0;
  FeatureRanking selected;
};

// Number of features kept at `ratio`: round(ratio * total), at least 1.
Index selected_count(Index total, double ratio);

// Rows of the selected features stacked across views, in ranking order.
Matrix stack_features(const MultiViewDataset& ds, const FeatureRanking& selected);

// k-means `runs` times with seeds seed..seed+runs-1 on the top features.
// Standard deviations are sample deviations (0 for a single run). Runs may
// be spread over `threads` workers; the result does not depend on it.
EvaluationReport evaluate_selection(const MultiViewDataset& ds, const FeatureRanking& ranking, double ratio, int runs,
                                    std::uint64_t seed, int threads = 1);

}  // namespace kafuse
