#pragma once

#include "kafuse/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace kafuse {

// One feature representation of the sample set: rows are features, columns
// are samples.
struct ViewMatrix {
  std::string name;
  Matrix data;

  Index dim() const { return data.rows(); }
  Index samples() const { return data.cols(); }
};

struct MultiViewDataset {
  std::string name;
  std::vector<ViewMatrix> views;
  // 1-based class ids, one per sample.
  std::optional<LabelVector> labels;
  std::optional<int> class_count;

  Index samples() const { return views.empty() ? 0 : views.front().samples(); }
  Index view_count() const { return static_cast<Index>(views.size()); }
  Index total_features() const;

  // Throws SchemaError / DataError when an invariant is violated.
  void validate() const;
};

enum class Normalization { minmax, zscore, none };

Normalization parse_normalization(const std::string& s);
std::string to_string(Normalization n);

// Reads `dataset.json` plus the view and label CSV files it names.
MultiViewDataset load_dataset(const std::filesystem::path& root);

// Writes the dataset in the same layout load_dataset reads. Values are
// printed in shortest round-trip form, so load(write(ds)) is exact.
void write_dataset(const MultiViewDataset& ds, const std::filesystem::path& root);

// Per-feature (row) scaling. Constant rows map to 0 under minmax and zscore.
MultiViewDataset normalize(const MultiViewDataset& ds, Normalization scheme);

struct SyntheticSpec {
  Index samples = 60;
  int classes = 3;
  Index views = 3;
  Index informative = 4;  // per view
  Index duplicates = 4;   // exact copies of informative rows
  Index nonlinear = 0;    // tanh of a standardized informative row
  Index noise = 4;        // cluster-independent rows
  double noise_std = 0.5;  // within-cluster spread of informative rows
  double separation = 1.0;  // scale of the class centres
  std::uint64_t seed = 7;

  void validate() const;
};

enum class FeatureRole { informative, redundant, noise };

// Global feature indices are 0-based over the concatenation of all views.
struct SyntheticTruth {
  std::vector<Index> informative;
  std::vector<Index> redundant;
  std::vector<Index> noise;
  // For redundant rows, the global index of the informative row they copy.
  std::vector<std::pair<Index, Index>> source_of;

  FeatureRole role(Index global_feature) const;
};

struct SyntheticDataset {
  MultiViewDataset data;
  SyntheticTruth truth;
};

// Row layout per view: informative, duplicates, nonlinear copies, noise.
// Labels cycle through the classes, so class sizes differ by at most one.
SyntheticDataset synth_generate(const SyntheticSpec& spec);

void write_ground_truth(const SyntheticTruth& truth, const std::filesystem::path& file);

}  // namespace kafuse
