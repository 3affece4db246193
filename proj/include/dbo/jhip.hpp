#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dbo/linalg.hpp"
#include "dbo/network.hpp"
#include "dbo/parallel.hpp"
#include "dbo/problem.hpp"
#include "dbo/schedule.hpp"

namespace dbo {

/// Decentralized computation of Z* with (sum_i H_i) Z* = sum_i J_i', Z* of shape q x p,
/// by gradient tracking on h_i(Z) = 1/2 tr(Z'H_i Z) - tr(J_i Z).
struct JhipState {
  std::vector<Mat> z;          // Z_i
  std::vector<Mat> y_tracker;  // Y_i
  std::vector<Mat> g_prev;     // G_i
  std::size_t t = 0;
};

struct JhipSample {
  Mat h;  // q x q
  Mat j;  // p x q
};

/// Sample pair of agent i for round t. Must be a pure function of (i, t).
using JhipSampler = std::function<JhipSample(std::size_t agent, std::size_t t)>;

class JhipMode {
 public:
  static JhipMode deterministic(std::vector<Mat> h, std::vector<Mat> j);
  static JhipMode stochastic(std::size_t n, std::size_t p, std::size_t q, JhipSampler sampler);

  bool is_stochastic() const noexcept { return static_cast<bool>(sampler_); }
  std::size_t n() const noexcept { return n_; }
  std::size_t p() const noexcept { return p_; }
  std::size_t q() const noexcept { return q_; }
  const std::vector<Mat>& h() const noexcept { return h_; }
  const std::vector<Mat>& j() const noexcept { return j_; }
  JhipSample sample(std::size_t agent, std::size_t t) const;

 private:
  std::size_t n_ = 0, p_ = 0, q_ = 0;
  std::vector<Mat> h_, j_;
  JhipSampler sampler_;
};

JhipState jhip_init(const JhipMode& mode, std::vector<Mat> z0, ThreadPool* pool = nullptr);

/// One synchronous round: Z <- W Z - gamma Y, then G from the new Z, then
/// Y <- W Y + G_new - G_old. Throws Divergence once some |Z_i|_F exceeds 1e12.
void jhip_step(JhipState& state, const JhipMode& mode, const WeightMatrix& w, double gamma_t,
               ThreadPool* pool = nullptr);

using JhipObserver = std::function<void(const JhipState&)>;

/// Runs `steps` rounds with gamma_t = schedule.at(t) and returns the final state.
/// The observer, if any, sees the state after init and after every round.
JhipState jhip_run_state(const JhipMode& mode, const WeightMatrix& w, std::size_t steps, const StepSchedule& schedule,
                         std::vector<Mat> z0, ThreadPool* pool = nullptr, const JhipObserver& observer = {});

std::vector<Mat> jhip_run(const JhipMode& mode, const WeightMatrix& w, std::size_t steps,
                          const StepSchedule& schedule, std::vector<Mat> z0, ThreadPool* pool = nullptr);

/// Direct reference Z* = (sum H_i)^-1 (sum J_i').
Mat jhip_reference(const std::vector<Mat>& h, const std::vector<Mat>& j);

/// |mean_i Y_i - mean_i (H_i Z_i - J_i')|_F for a deterministic mode.
double jhip_tracking_residual(const JhipState& state, const JhipMode& mode);

/// gamma = c/L_H (constant) or gamma_t = (c/L_H) / (1 + t/20) (stochastic), where c is
/// tracking_step_factor(w) (c = 1 when no network is given).
StepSchedule default_jhip_schedule(double l_h, bool stochastic, const WeightMatrix* w = nullptr);

}  // namespace dbo
