#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dbo/network.hpp"
#include "dbo/problem.hpp"
#include "dbo/solvers.hpp"

namespace dbo {

enum class ProblemKind { Quadratic, Logistic, Hypercleaning };

std::string_view to_string(ProblemKind k) noexcept;

struct ProblemConfig {
  ProblemKind kind = ProblemKind::Quadratic;
  std::size_t agents = 5;
  std::size_t dim_x = 3;          // quadratic only; logistic uses dim_y, hypercleaning derives it
  std::size_t dim_y = 4;
  std::size_t samples = 100;      // per agent and split
  double heterogeneity = 0.5;
  double noise_rate = 0.1;        // logistic label noise
  double corruption = 0.3;        // hypercleaning label flips
  double regularization = 0.001;  // hypercleaning c_r
  double sigma = 0.0;             // quadratic oracle noise
  std::uint64_t data_seed = 1;
};

/// Everything needed to reproduce one experiment. The flat key = value form is
/// produced by serialize_config and read back by parse_config_text.
struct ExperimentConfig {
  std::string name = "custom";
  ProblemConfig problem;
  double ring_a = 0.4;
  std::vector<Algorithm> algorithms{Algorithm::Dbo, Algorithm::Dbogt, Algorithm::Dsbo};
  std::size_t K = 100;
  std::size_t T = 10;
  std::size_t N = 20;
  std::size_t M = 10;
  StepSchedule eta_x = StepSchedule::constant(0.01);
  StepSchedule eta_y = StepSchedule::constant(0.01);
  std::optional<StepSchedule> gamma;
  double epsilon = 0.01;
  std::size_t minibatch = 1;
  std::uint64_t seed = 1;
  std::size_t repeats = 0;  // 0: 1 for deterministic algorithms, 5 for dsbo
  std::size_t workers = 1;
  bool warm_start_cg = true;
  bool warm_start_jhip = true;
  bool persist_inner_tracker = false;
  bool record_lemma_accumulators = false;
  double oracle_tol = 1e-10;

  std::size_t repeats_for(Algorithm a) const noexcept;
};

/// Embedded presets: synthetic-logistic-fig1a, hypercleaning, quadratic-smoke.
std::vector<std::string> preset_names();
std::string preset_text(std::string_view name);  // ValidationError listing the presets when unknown
ExperimentConfig preset(std::string_view name);

/// Parses key = value lines ('#' starts a comment). A `preset = <name>` line must come
/// first if present and seeds the remaining keys. Unknown keys and malformed values
/// raise ParseError naming the line and key.
ExperimentConfig parse_config_text(std::string_view text, std::string_view origin = "<config>");
ExperimentConfig parse_config_file(const std::filesystem::path& path);

/// Applies one key = value override on top of an existing config.
void apply_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value);

/// Canonical form: every key, fixed order, doubles with 17 significant digits.
std::string serialize_config(const ExperimentConfig& cfg);

/// Checks the invariants that do not need the built problem (a in (0,1), counts >= 1, ...).
void validate_config(const ExperimentConfig& cfg);

struct ResolvedExperiment {
  BilevelProblem problem;
  WeightMatrix network;
};

BilevelProblem build_problem(const ProblemConfig& p);
ResolvedExperiment resolve(const ExperimentConfig& cfg);

/// RunConfig for one algorithm of the experiment; the regime follows from the algorithm
/// and from whether the lower level is shared across agents. Fully validated.
RunConfig run_config_for(const ExperimentConfig& cfg, const BilevelProblem& prob, Algorithm a, std::uint64_t seed);

}  // namespace dbo
