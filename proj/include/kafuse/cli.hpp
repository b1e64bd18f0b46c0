#pragma once

#include "kafuse/dataset.hpp"
#include "kafuse/eval.hpp"
#include "kafuse/solver.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace kafuse {

enum ExitCode : int { exit_ok = 0, exit_failure = 1, exit_usage = 2, exit_numerical = 3 };

int run_cli(int argc, char** argv);

// Shortest round-trip decimal, independent of the locale.
std::string format_number(double x);
// Fixed two decimals, independent of the locale.
std::string format_percent(double x);

// 64-bit FNV-1a over view shapes, values and labels.
std::uint64_t dataset_checksum(const MultiViewDataset& ds);

// ranking.csv: rank,view,feature,score with 1-based rank, view and feature.
void write_ranking(const FeatureRanking& ranking, const std::filesystem::path& file);
FeatureRanking read_ranking(const std::filesystem::path& file);

void write_trace(const ConvergenceTrace& trace, const std::filesystem::path& file);

}  // namespace kafuse
