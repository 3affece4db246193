#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <vector>

#include "dbo/config.hpp"
#include "dbo/solvers.hpp"

namespace dbo {

struct RunOutcome {
  Algorithm algorithm = Algorithm::Dbo;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  RunMetrics metrics;
  std::filesystem::path csv;
};

struct ExperimentSummary {
  std::vector<RunOutcome> runs;
  std::filesystem::path summary_csv;
  std::filesystem::path plotdata_csv;

  /// Mean over repeats of the final gradient norm for one algorithm.
  double mean_final_grad_norm(Algorithm a) const;
};

/// Seed of repeat r; repeat 0 uses the configured seed itself.
std::uint64_t repeat_seed(std::uint64_t seed, std::size_t r);

/// Runs every configured algorithm for its number of repeats and writes
/// <algorithm>_r<repeat>.csv, summary.csv, plotdata.csv and config.txt into out_dir.
ExperimentSummary run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

struct RateProbeRow {
  std::size_t K = 0;
  double avg_sq_grad_norm = 0.0;  // (1/(K+1)) sum_k |grad Phi(xbar_k)|^2, mean over repeats
};

struct RateProbeResult {
  Algorithm algorithm = Algorithm::Dbo;
  std::vector<RateProbeRow> rows;
  std::optional<double> slope;  // least squares slope of log metric on log K
};

/// Runs the algorithm with its theorem preset step sizes for each K (ascending).
RateProbeResult rate_probe(const ExperimentConfig& cfg, Algorithm a, const std::vector<std::size_t>& k_list,
                           std::size_t repeats = 0, double scale = 1.0);

void write_rate_probe_csv(const RateProbeResult& r, std::ostream& out);

}  // namespace dbo
