#include "dbo/jhip.hpp"

#include <cmath>
#include <string>

#include "dbo/error.hpp"
#include "dbo/numerics.hpp"

namespace dbo {
namespace {

constexpr double kDivergence = 1e12;

void check_shape(const Mat& m, std::size_t r, std::size_t c, const char* what) {
  require(m.rows() == r && m.cols() == c, ErrorKind::DimMismatch,
          std::string("jhip: ") + what + " must be " + std::to_string(r) + "x" + std::to_string(c));
}

/// H Z - J' for the stochastic convention, H Z for the deterministic one.
Mat local_gradient(const JhipMode& mode, std::size_t i, std::size_t t, const Mat& z) {
  if (!mode.is_stochastic()) return matmul(mode.h()[i], z);
  const JhipSample s = mode.sample(i, t);
  check_shape(s.h, mode.q(), mode.q(), "sampled H");
  check_shape(s.j, mode.p(), mode.q(), "sampled J");
  return matmul(s.h, z) - s.j.transpose();
}

}  // namespace

JhipMode JhipMode::deterministic(std::vector<Mat> h, std::vector<Mat> j) {
  require(!h.empty() && h.size() == j.size(), ErrorKind::DimMismatch, "jhip: need one (H, J) pair per agent");
  JhipMode m;
  m.n_ = h.size();
  m.q_ = h[0].rows();
  m.p_ = j[0].rows();
  for (std::size_t i = 0; i < m.n_; ++i) {
    check_shape(h[i], m.q_, m.q_, "H_i");
    check_shape(j[i], m.p_, m.q_, "J_i");
  }
  m.h_ = std::move(h);
  m.j_ = std::move(j);
  return m;
}

JhipMode JhipMode::stochastic(std::size_t n, std::size_t p, std::size_t q, JhipSampler sampler) {
  require(n >= 1 && p >= 1 && q >= 1, ErrorKind::DimMismatch, "jhip: empty stochastic mode");
  require(static_cast<bool>(sampler), ErrorKind::MissingInput, "jhip: stochastic mode needs a sampler");
  JhipMode m;
  m.n_ = n;
  m.p_ = p;
  m.q_ = q;
  m.sampler_ = std::move(sampler);
  return m;
}

JhipSample JhipMode::sample(std::size_t agent, std::size_t t) const {
  if (sampler_) return sampler_(agent, t);
  return {h_[agent], j_[agent]};
}

JhipState jhip_init(const JhipMode& mode, std::vector<Mat> z0, ThreadPool* pool) {
  require(z0.size() == mode.n(), ErrorKind::DimMismatch, "jhip_init: need one Z per agent");
  for (const Mat& z : z0) check_shape(z, mode.q(), mode.p(), "Z_i");
  JhipState s;
  s.z = std::move(z0);
  s.y_tracker.resize(mode.n());
  s.g_prev.resize(mode.n());
  for_each_index(pool, mode.n(), [&](std::size_t i) {
    if (mode.is_stochastic()) {
      s.g_prev[i] = local_gradient(mode, i, 0, s.z[i]);
      s.y_tracker[i] = s.g_prev[i];
    } else {
      s.g_prev[i] = matmul(mode.h()[i], s.z[i]);
      s.y_tracker[i] = s.g_prev[i] - mode.j()[i].transpose();
    }
  });
  return s;
}

void jhip_step(JhipState& state, const JhipMode& mode, const WeightMatrix& w, double gamma_t, ThreadPool* pool) {
  require(gamma_t > 0.0, ErrorKind::BadParameter, "jhip_step: gamma must be > 0");
  require(w.n() == mode.n() && state.z.size() == mode.n(), ErrorKind::DimMismatch,
          "jhip_step: network size differs from agent count");
  std::vector<Mat> z_next = mix(w, state.z);
  std::vector<Mat> y_next = mix(w, state.y_tracker);
  std::vector<Mat> g_next(mode.n());
  const std::size_t t_next = state.t + 1;
  for_each_index(pool, mode.n(), [&](std::size_t i) {
    z_next[i].axpy(-gamma_t, state.y_tracker[i]);
    g_next[i] = local_gradient(mode, i, t_next, z_next[i]);
    y_next[i] += g_next[i];
    y_next[i] -= state.g_prev[i];
  });
  for (std::size_t i = 0; i < mode.n(); ++i) {
    const double zn = frobenius_norm(z_next[i]);
    if (!(zn <= kDivergence)) {
      fail(ErrorKind::Divergence, "jhip: |Z_" + std::to_string(i) + "| = " + std::to_string(zn) + " at t = " +
                                      std::to_string(t_next) + " (step size too large)");
    }
  }
  state.z = std::move(z_next);
  state.y_tracker = std::move(y_next);
  state.g_prev = std::move(g_next);
  state.t = t_next;
}

JhipState jhip_run_state(const JhipMode& mode, const WeightMatrix& w, std::size_t steps, const StepSchedule& schedule,
                         std::vector<Mat> z0, ThreadPool* pool, const JhipObserver& observer) {
  require(steps >= 1, ErrorKind::BadParameter, "jhip_run: need at least one step");
  schedule.validate("jhip_run");
  JhipState s = jhip_init(mode, std::move(z0), pool);
  if (observer) observer(s);
  for (std::size_t t = 0; t < steps; ++t) {
    jhip_step(s, mode, w, schedule.at(t), pool);
    if (observer) observer(s);
  }
  return s;
}

std::vector<Mat> jhip_run(const JhipMode& mode, const WeightMatrix& w, std::size_t steps,
                          const StepSchedule& schedule, std::vector<Mat> z0, ThreadPool* pool) {
  return jhip_run_state(mode, w, steps, schedule, std::move(z0), pool).z;
}

Mat jhip_reference(const std::vector<Mat>& h, const std::vector<Mat>& j) {
  require(!h.empty() && h.size() == j.size(), ErrorKind::DimMismatch, "jhip_reference: need matching lists");
  Mat hs = h[0];
  Mat js = j[0];
  for (std::size_t i = 1; i < h.size(); ++i) {
    hs += h[i];
    js += j[i];
  }
  return spd_solve(hs, js.transpose());
}

double jhip_tracking_residual(const JhipState& state, const JhipMode& mode) {
  require(!mode.is_stochastic(), ErrorKind::BadParameter, "tracking residual needs the deterministic mode");
  Mat diff(mode.q(), mode.p());
  for (std::size_t i = 0; i < mode.n(); ++i) {
    diff += state.y_tracker[i];
    diff -= matmul(mode.h()[i], state.z[i]) - mode.j()[i].transpose();
  }
  return frobenius_norm(diff) / static_cast<double>(mode.n());
}

StepSchedule default_jhip_schedule(double l_h, bool stochastic, const WeightMatrix* w) {
  require(l_h > 0.0, ErrorKind::BadParameter, "jhip: L_H must be > 0");
  const double base = (w != nullptr ? tracking_step_factor(*w) : 1.0) / l_h;
  return stochastic ? StepSchedule::diminishing(base, 20.0) : StepSchedule::constant(base);
}

}  // namespace dbo
