#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbo/hypergrad.hpp"
#include "dbo/linalg.hpp"
#include "dbo/network.hpp"
#include "dbo/parallel.hpp"
#include "dbo/problem.hpp"
#include "dbo/rng.hpp"
#include "dbo/schedule.hpp"

namespace dbo {

enum class Algorithm { Dbo, Dbogt, Dsbo };

std::string_view to_string(Algorithm a) noexcept;
/// Accepts "dbo", "dbogt", "dsbo" (case-insensitive).
Algorithm parse_algorithm(std::string_view s);

struct RunConfig {
  Algorithm algorithm = Algorithm::Dbo;
  Regime regime;
  std::size_t K = 100;
  std::size_t T = 10;
  std::size_t N = 20;
  std::size_t M = 10;
  StepSchedule eta_x = StepSchedule::constant(0.01);  // indexed by the outer iteration k
  StepSchedule eta_y = StepSchedule::constant(0.01);  // indexed by the inner step t
  double epsilon = 0.01;
  std::optional<StepSchedule> gamma;  // JHIP; default 1/L_H, diminishing when stochastic
  std::size_t minibatch = 1;
  std::uint64_t seed = 1;
  bool record_oracle_metrics = true;
  bool record_lemma_accumulators = false;  // A_K and B_K, one local solve per agent and iteration
  bool warm_start_cg = true;
  bool warm_start_jhip = true;
  bool persist_inner_tracker = false;
  std::optional<std::size_t> neumann_fixed_m_prime;
  std::size_t workers = 1;
  double oracle_tol = 1e-10;

  /// Throws ValidationError naming the violated condition.
  void validate(const BilevelProblem& prob) const;
};

/// Per-agent iterates and carry-over between outer iterations.
struct AgentState {
  Vec x;
  Vec y;
  Vec v_inner;
  Vec g_inner;  // last inner gradient, needed only when the inner tracker persists
  Vec u_outer;
  Vec estimate;  // hypergradient estimate of the current outer iteration
  Vec cg_warm;
  Mat z_warm;
};

struct IterationRecord {
  std::size_t k = 0;
  std::optional<double> grad_norm_mean;
  double consensus = 0.0;
  std::optional<double> inner_residual;
  std::optional<double> tracker_drift;
  double S_K = 0.0;
  double E_K = 0.0;
  std::optional<double> T_K;
  std::optional<double> A_K;
  std::optional<double> B_K;
  std::optional<double> consensus_gap;  // |y~*_k - y*(xbar_k)|
};

struct RunMetrics {
  Algorithm algorithm = Algorithm::Dbo;
  std::vector<IterationRecord> rows;  // k = 0..K
  std::vector<Vec> x_final;
  Vec x_bar_final;
  double kappa = 1.0;
  // largest residuals of the identities the algorithms must preserve
  double max_average_identity = 0.0;    // xbar_{k+1} = xbar_k - eta_x mean(direction_k)
  double max_outer_tracking = 0.0;      // ubar_k = mean of estimates (DBOGT)
  double max_inner_tracking = 0.0;      // vbar^(t) = mean grad_y g_i (heterogeneous deterministic)
  double max_jhip_tracking = 0.0;       // Ybar_t = mean(H_i Z_i - J_i') (deterministic JHIP)
  double max_consensus_gap_excess = -1e300;  // max_k |y~* - y*(xbar)| - kappa |Q_k|
};

enum class InnerMode { LocalGradient, Tracking, MixedStochastic };

InnerMode inner_mode_for(Algorithm a, Regime r) noexcept;

struct InnerSampling {
  RngPlan plan;
  std::size_t k = 0;
  std::size_t batch = 1;
};

struct InnerLoopResult {
  std::vector<Vec> y;
  std::vector<Vec> v;
  std::vector<Vec> g_last;
  double max_tracking_residual = 0.0;
};

/// T inner steps with x fixed. `v_start`/`g_start` are used only by the tracking
/// mode and only when non-empty (persisted tracker); otherwise v restarts at the
/// local gradient. `sampling` switches gradients to minibatch draws.
InnerLoopResult inner_loop(const BilevelProblem& prob, const WeightMatrix& w, std::span<const Vec> x,
                           std::vector<Vec> y_start, InnerMode mode, std::size_t T, const StepSchedule& eta_y,
                           const InnerSampling* sampling = nullptr, std::span<const Vec> v_start = {},
                           std::span<const Vec> g_start = {}, ThreadPool* pool = nullptr);

RunMetrics dbo_run(const BilevelProblem& prob, const WeightMatrix& w, const RunConfig& config);
RunMetrics dbogt_run(const BilevelProblem& prob, const WeightMatrix& w, const RunConfig& config);
RunMetrics dsbo_run(const BilevelProblem& prob, const WeightMatrix& w, const RunConfig& config);
RunMetrics run(const BilevelProblem& prob, const WeightMatrix& w, const RunConfig& config);

/// Stepsize presets shaped like the theorems: orders in K, n and kappa with the
/// free constant `scale`; T and N from the constants ledger.
RunConfig theorem1_preset(const BilevelProblem& prob, const WeightMatrix& w, std::size_t K, double scale = 1.0);  // DBO, eta_x ~ K^-1/3
RunConfig theorem2_preset(const BilevelProblem& prob, const WeightMatrix& w, std::size_t K, double scale = 1.0);  // DBOGT, constant eta_x
RunConfig theorem3_preset(const BilevelProblem& prob, const WeightMatrix& w, std::size_t K, double scale = 1.0);  // DSBO, eta ~ K^-1/2

/// Header k,grad_norm_mean,consensus,inner_residual,tracker_drift,S_K,E_K,T_K; 17 significant digits.
void write_metrics_csv(const RunMetrics& m, std::ostream& out);
void write_metrics_csv(const RunMetrics& m, const std::string& path);

}  // namespace dbo
