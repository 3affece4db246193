#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "dbo/problem.hpp"

namespace dbo {

/// g_i(x, y) = 1/2 y'A_i y - y'(B_i x + b_i),  f_i(x, y) = 1/2|x - c_i|^2 + 1/2|y - d_i|^2.
/// Stochastic draws add zero-mean Gaussian noise of level sigma / sqrt(batch).
class QuadraticAgent final : public AgentOracles {
 public:
  QuadraticAgent(Mat a, Mat b, Vec b0, Vec c, Vec d, double sigma = 0.0);

  std::size_t p() const override { return b_.cols(); }
  std::size_t q() const override { return b_.rows(); }

  using AgentOracles::f;
  using AgentOracles::g;
  using AgentOracles::grad_x_f;
  using AgentOracles::grad_y_f;
  using AgentOracles::grad_y_g;
  using AgentOracles::hess_yy_g_vp;
  using AgentOracles::jac_xy_g;
  using AgentOracles::hess_yy_g;

  double f(const Vec& x, const Vec& y, const Sample& s) const override;
  double g(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec grad_x_f(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec grad_y_f(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec grad_y_g(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec hess_yy_g_vp(const Vec& x, const Vec& y, const Vec& v, const Sample& s) const override;
  Mat jac_xy_g(const Vec& x, const Vec& y, const Sample& s) const override;
  Mat hess_yy_g(const Vec& x, const Vec& y, const Sample& s) const override;
  Sample draw_upper(Rng& rng, std::size_t batch) const override;
  Sample draw_lower(Rng& rng, std::size_t batch) const override;

  const Mat& a() const noexcept { return a_; }
  const Mat& b() const noexcept { return b_; }
  const Vec& b0() const noexcept { return b0_; }
  const Vec& c() const noexcept { return c_; }
  const Vec& d() const noexcept { return d_; }
  double sigma() const noexcept { return sigma_; }

 private:
  Mat a_, b_;
  Vec b0_, c_, d_;
  double sigma_;
};

struct QuadraticSpec {
  std::size_t n = 5;
  std::size_t p = 3;
  std::size_t q = 4;
  double lower_spread = 0.0;  // spread of {A_i, B_i, b_i} across agents
  double upper_spread = 0.0;  // spread of {c_i, d_i}
  double mu = 1.0;            // smallest eigenvalue of the shared part of A_i
  double l_max = 4.0;         // largest eigenvalue of the shared part of A_i
  double coupling = 1.0;      // scale of B_i
  double sigma = 0.0;
  std::uint64_t seed = 1;
};

BilevelProblem make_quadratic(const QuadraticSpec& spec);
BilevelProblem make_quadratic_testbed(std::size_t n, std::size_t p, std::size_t q, double heterogeneity,
                                      std::uint64_t seed);

/// Closed forms for quadratic problems built from QuadraticAgent.
Vec quadratic_y_star(const BilevelProblem& prob, const Vec& x);
Vec quadratic_hypergradient(const BilevelProblem& prob, const Vec& x);

/// Binary logistic data: rows of `features` are samples, labels are +-1.
struct Dataset {
  Mat features;
  Vec labels;
  std::size_t size() const noexcept { return features.rows(); }
};

/// Hyperparameter tuning of an l2 regularized logistic regression:
/// x = lambda, y = tau, g_i = mean_train psi(y_e x_e'tau) + 1/2 tau' diag(e^lambda) tau,
/// f_i = mean_val psi(y_e x_e'tau), psi(t) = log(1 + e^-t).
class LogisticAgent final : public AgentOracles {
 public:
  LogisticAgent(Dataset train, Dataset val);

  std::size_t p() const override { return train_.features.cols(); }
  std::size_t q() const override { return train_.features.cols(); }

  using AgentOracles::f;
  using AgentOracles::g;
  using AgentOracles::grad_x_f;
  using AgentOracles::grad_y_f;
  using AgentOracles::grad_y_g;
  using AgentOracles::hess_yy_g_vp;
  using AgentOracles::jac_xy_g;
  using AgentOracles::hess_yy_g;

  double f(const Vec& x, const Vec& y, const Sample& s) const override;
  double g(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec grad_x_f(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec grad_y_f(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec grad_y_g(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec hess_yy_g_vp(const Vec& x, const Vec& y, const Vec& v, const Sample& s) const override;
  Mat jac_xy_g(const Vec& x, const Vec& y, const Sample& s) const override;
  Mat hess_yy_g(const Vec& x, const Vec& y, const Sample& s) const override;
  Sample draw_upper(Rng& rng, std::size_t batch) const override;
  Sample draw_lower(Rng& rng, std::size_t batch) const override;
  std::vector<NamedDataset> datasets() const override;

  const Dataset& train() const noexcept { return train_; }
  const Dataset& val() const noexcept { return val_; }

 private:
  Dataset train_, val_;
};

struct LogisticSpec {
  std::size_t n = 20;
  std::size_t p = 50;
  std::size_t train_per_agent = 500;
  std::size_t val_per_agent = 500;
  double noise_rate = 0.1;
  std::uint64_t seed = 1;
};

BilevelProblem make_synthetic_logistic(const LogisticSpec& spec);
BilevelProblem make_synthetic_logistic(std::size_t n, std::size_t p, std::size_t q, std::size_t samples_per_agent,
                                       double noise_rate, std::uint64_t seed);

/// Data hyper-cleaning: one weight lambda_e per training sample of the whole
/// network (x has n * m_train entries, agent i owns block i), a linear classifier
/// tau, g_i = mean_e sigmoid(lambda_e) psi(y_e x_e'tau) + c_r |tau|^2 on possibly
/// corrupted labels, f_i = mean clean validation loss.
class HypercleaningAgent final : public AgentOracles {
 public:
  HypercleaningAgent(Dataset train, Dataset val, std::size_t offset, std::size_t p_total, double c_r);

  std::size_t p() const override { return p_total_; }
  std::size_t q() const override { return train_.features.cols(); }

  using AgentOracles::f;
  using AgentOracles::g;
  using AgentOracles::grad_x_f;
  using AgentOracles::grad_y_f;
  using AgentOracles::grad_y_g;
  using AgentOracles::hess_yy_g_vp;
  using AgentOracles::jac_xy_g;
  using AgentOracles::hess_yy_g;

  double f(const Vec& x, const Vec& y, const Sample& s) const override;
  double g(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec grad_x_f(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec grad_y_f(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec grad_y_g(const Vec& x, const Vec& y, const Sample& s) const override;
  Vec hess_yy_g_vp(const Vec& x, const Vec& y, const Vec& v, const Sample& s) const override;
  Mat jac_xy_g(const Vec& x, const Vec& y, const Sample& s) const override;
  Mat hess_yy_g(const Vec& x, const Vec& y, const Sample& s) const override;
  Sample draw_upper(Rng& rng, std::size_t batch) const override;
  Sample draw_lower(Rng& rng, std::size_t batch) const override;
  std::vector<NamedDataset> datasets() const override;

  const Dataset& train() const noexcept { return train_; }
  const Dataset& val() const noexcept { return val_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  Dataset train_, val_;
  std::size_t offset_;
  std::size_t p_total_;
  double c_r_;
};

struct HypercleaningSpec {
  std::size_t n = 20;
  std::size_t features = 10;
  std::size_t train_per_agent = 50;
  std::size_t val_per_agent = 50;
  double corruption_rate = 0.3;
  double c_r = 0.001;
  double heterogeneity = 1.0;  // spread of the per-agent cluster centres
  std::uint64_t seed = 1;
};

BilevelProblem make_synthetic_hypercleaning(const HypercleaningSpec& spec);
BilevelProblem make_synthetic_hypercleaning(std::size_t n, std::size_t features, std::size_t samples_per_agent,
                                            double corruption_rate, double c_r, std::uint64_t seed);

/// Writes agentNN_<dataset>.csv per agent and dataset: one row per sample, the
/// features followed by the label. Returns the files written.
std::vector<std::filesystem::path> dump_datasets_csv(const BilevelProblem& prob, const std::filesystem::path& dir);

}  // namespace dbo
