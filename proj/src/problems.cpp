#include "dbo/problems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "dbo/error.hpp"
#include "dbo/kernels.hpp"
#include "dbo/numerics.hpp"

namespace dbo {
namespace {

constexpr double kDomainRadius = 10.0;

// psi(t) = log(1 + e^-t) and its first two derivatives, overflow safe.
double psi(double t) { return t > 0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t)); }
double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}
double psi1(double t) { return -sigmoid(-t); }
double psi2(double t) { return sigmoid(t) * sigmoid(-t); }

Vec gaussian_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Vec v(n);
  for (auto& e : v) e = nd(rng);
  return v;
}

Mat gaussian_mat(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Mat m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

Mat symmetrize(Mat a) {
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) {
      const double s = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = s;
      a(j, i) = s;
    }
  return a;
}

/// Q diag(eigs) Q' with Q from modified Gram-Schmidt on a Gaussian matrix.
Mat random_spd_with_spectrum(const Vec& eigs, Rng& rng) {
  const std::size_t n = eigs.size();
  Mat q = gaussian_mat(n, n, rng);
  for (std::size_t j = 0; j < n; ++j) {
    Vec c = q.col(j);
    for (std::size_t k = 0; k < j; ++k) {
      const Vec prev = q.col(k);
      c.axpy(-dot(prev, c), prev);
    }
    c *= 1.0 / norm(c);
    q.set_col(j, c);
  }
  return symmetrize(matmul(matmul(q, Mat::diag(eigs)), q.transpose()));
}

// Per-oracle salts keep the noise of different oracles evaluated on one sample independent.
enum NoiseSalt : std::uint64_t { kGradXF = 11, kGradYF = 12, kGradYG = 13, kHess = 14, kJac = 15 };

Rng noise_stream(const Sample& s, NoiseSalt salt) { return Rng(splitmix64(s.noise_seed ^ splitmix64(salt))); }

double noise_scale(double sigma, const Sample& s) {
  return sigma / std::sqrt(static_cast<double>(std::max<std::size_t>(1, s.batch)));
}

Sample draw_indices(Rng& rng, std::size_t batch, std::size_t m) {
  require(batch >= 1, ErrorKind::BadParameter, "minibatch size must be >= 1");
  require(m >= 1, ErrorKind::BadParameter, "cannot sample from an empty dataset");
  Sample s;
  s.full = false;
  s.batch = batch;
  std::uniform_int_distribution<std::size_t> pick(0, m - 1);
  s.indices.resize(batch);
  for (auto& i : s.indices) i = pick(rng);
  return s;
}

template <class Fn>
void over_rows(const Dataset& d, const Sample& s, Fn&& fn) {
  if (s.full) {
    for (std::size_t e = 0; e < d.size(); ++e) fn(e);
  } else {
    for (std::size_t e : s.indices) {
      require(e < d.size(), ErrorKind::DimMismatch, "sample index outside dataset");
      fn(e);
    }
  }
}

double row_count(const Dataset& d, const Sample& s) {
  return static_cast<double>(s.full ? d.size() : s.indices.size());
}

double margin(const Dataset& d, std::size_t e, const Vec& tau) {
  return d.labels[e] * kernels::dot(d.features.row(e).data(), tau.data(), tau.size());
}

/// mean_e w(t_e) * y_e * x_e
template <class W>
Vec weighted_label_sum(const Dataset& d, const Sample& s, const Vec& tau, W&& weight) {
  Vec out(tau.size());
  const double inv = 1.0 / row_count(d, s);
  over_rows(d, s, [&](std::size_t e) {
    const double t = margin(d, e, tau);
    kernels::axpy(inv * weight(e, t) * d.labels[e], d.features.row(e).data(), out.data(), out.size());
  });
  return out;
}

/// mean_e w_e x_e x_e'
template <class W>
Mat weighted_gram(const Dataset& d, const Sample& s, const Vec& tau, W&& weight) {
  const std::size_t q = tau.size();
  Mat h(q, q);
  const double inv = 1.0 / row_count(d, s);
  over_rows(d, s, [&](std::size_t e) {
    const double w = inv * weight(e, margin(d, e, tau));
    const auto x = d.features.row(e);
    for (std::size_t r = 0; r < q; ++r) {
      if (x[r] != 0.0) kernels::axpy(w * x[r], x.data(), h.row(r).data(), q);
    }
  });
  return symmetrize(std::move(h));
}

template <class W>
Vec weighted_gram_vp(const Dataset& d, const Sample& s, const Vec& tau, const Vec& v, W&& weight) {
  Vec out(tau.size());
  const double inv = 1.0 / row_count(d, s);
  over_rows(d, s, [&](std::size_t e) {
    const auto x = d.features.row(e);
    const double w = inv * weight(e, margin(d, e, tau)) * kernels::dot(x.data(), v.data(), v.size());
    kernels::axpy(w, x.data(), out.data(), out.size());
  });
  return out;
}

double max_row_norm(const Mat& x) {
  double m = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    m = std::max(m, std::sqrt(kernels::dot(row.data(), row.data(), row.size())));
  }
  return m;
}

double scaled_gram_norm(const Dataset& d) { return std::pow(spectral_norm(d.features), 2) / d.size(); }

void check_dims(const Vec& x, std::size_t p, const Vec& y, std::size_t q) {
  require(x.size() == p && y.size() == q, ErrorKind::DimMismatch, "oracle called with wrong dimensions");
}

const QuadraticAgent& as_quadratic(const BilevelProblem& prob, std::size_t i) {
  const auto* a = dynamic_cast<const QuadraticAgent*>(prob.agents[i].get());
  require(a != nullptr, ErrorKind::BadParameter, "closed form requires quadratic agents");
  return *a;
}

}  // namespace

// ---------------------------------------------------------------- quadratic

QuadraticAgent::QuadraticAgent(Mat a, Mat b, Vec b0, Vec c, Vec d, double sigma)
    : a_(std::move(a)), b_(std::move(b)), b0_(std::move(b0)), c_(std::move(c)), d_(std::move(d)), sigma_(sigma) {
  require(a_.rows() == a_.cols() && a_.rows() == b_.rows() && b0_.size() == b_.rows() && c_.size() == b_.cols() &&
              d_.size() == b_.rows(),
          ErrorKind::DimMismatch, "QuadraticAgent: inconsistent shapes");
  require(sigma_ >= 0.0, ErrorKind::BadParameter, "QuadraticAgent: sigma must be >= 0");
}

double QuadraticAgent::f(const Vec& x, const Vec& y, const Sample&) const {
  check_dims(x, p(), y, q());
  return 0.5 * squared_norm(x - c_) + 0.5 * squared_norm(y - d_);
}

double QuadraticAgent::g(const Vec& x, const Vec& y, const Sample&) const {
  check_dims(x, p(), y, q());
  return 0.5 * dot(y, matvec(a_, y)) - dot(y, matvec(b_, x) + b0_);
}

Vec QuadraticAgent::grad_x_f(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  Vec out = x - c_;
  if (!s.full && sigma_ > 0) {
    Rng r = noise_stream(s, kGradXF);
    out += gaussian_vec(p(), r, noise_scale(sigma_, s));
  }
  return out;
}

Vec QuadraticAgent::grad_y_f(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  Vec out = y - d_;
  if (!s.full && sigma_ > 0) {
    Rng r = noise_stream(s, kGradYF);
    out += gaussian_vec(q(), r, noise_scale(sigma_, s));
  }
  return out;
}

Vec QuadraticAgent::grad_y_g(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  Vec out = matvec(a_, y) - matvec(b_, x) - b0_;
  if (!s.full && sigma_ > 0) {
    Rng r = noise_stream(s, kGradYG);
    out += gaussian_vec(q(), r, noise_scale(sigma_, s));
  }
  return out;
}

Mat QuadraticAgent::hess_yy_g(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  if (s.full || sigma_ == 0) return a_;
  Rng r = noise_stream(s, kHess);
  return a_ + symmetrize(gaussian_mat(q(), q(), r, noise_scale(sigma_, s)));
}

Vec QuadraticAgent::hess_yy_g_vp(const Vec& x, const Vec& y, const Vec& v, const Sample& s) const {
  require(v.size() == q(), ErrorKind::DimMismatch, "hess_yy_g_vp: v has wrong dimension");
  return matvec(hess_yy_g(x, y, s), v);
}

Mat QuadraticAgent::jac_xy_g(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  Mat j = -1.0 * b_.transpose();
  if (!s.full && sigma_ > 0) {
    Rng r = noise_stream(s, kJac);
    j += gaussian_mat(p(), q(), r, noise_scale(sigma_, s));
  }
  return j;
}

Sample QuadraticAgent::draw_upper(Rng& rng, std::size_t batch) const {
  require(batch >= 1, ErrorKind::BadParameter, "minibatch size must be >= 1");
  Sample s;
  s.full = false;
  s.batch = batch;
  s.noise_seed = rng();
  return s;
}

Sample QuadraticAgent::draw_lower(Rng& rng, std::size_t batch) const { return draw_upper(rng, batch); }

BilevelProblem make_quadratic(const QuadraticSpec& spec) {
  require(spec.n >= 1 && spec.p >= 1 && spec.q >= 1, ErrorKind::BadParameter, "quadratic: n, p, q must be >= 1");
  require(spec.lower_spread >= 0 && spec.upper_spread >= 0, ErrorKind::BadParameter,
          "quadratic: heterogeneity must be >= 0");
  require(spec.mu > 0 && spec.l_max >= spec.mu, ErrorKind::BadParameter, "quadratic: need 0 < mu <= l_max");
  require(spec.sigma >= 0, ErrorKind::BadParameter, "quadratic: sigma must be >= 0");
  const RngPlan plan(spec.seed);
  Rng shared = plan.stream(spec.n, StreamRole::Data);
  Vec spectrum(spec.q);
  for (std::size_t k = 0; k < spec.q; ++k) {
    spectrum[k] = spec.q == 1 ? spec.mu
                              : spec.mu + (spec.l_max - spec.mu) * static_cast<double>(k) / (spec.q - 1);
  }
  const Mat a0 = random_spd_with_spectrum(spectrum, shared);
  const Mat b0 = gaussian_mat(spec.q, spec.p, shared, spec.coupling / std::sqrt(static_cast<double>(spec.p)));
  const Vec r0 = gaussian_vec(spec.q, shared);
  const Vec c0 = gaussian_vec(spec.p, shared);
  const Vec d0 = gaussian_vec(spec.q, shared);

  BilevelProblem prob;
  prob.name = "quadratic";
  prob.n = spec.n;
  prob.p = spec.p;
  prob.q = spec.q;
  double mu = INFINITY, l_g1 = 0.0, cd = 0.0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    Rng rng = plan.stream(i, StreamRole::Data);
    const Mat m = gaussian_mat(spec.q, spec.q, rng);
    Mat a = a0 + (spec.lower_spread / spec.q) * matmul_tn(m, m);
    a = symmetrize(std::move(a));
    Mat b = b0 + gaussian_mat(spec.q, spec.p, rng, spec.lower_spread / std::sqrt(static_cast<double>(spec.p)));
    Vec r = r0 + gaussian_vec(spec.q, rng, spec.lower_spread);
    Vec c = c0 + gaussian_vec(spec.p, rng, spec.upper_spread);
    Vec d = d0 + gaussian_vec(spec.q, rng, spec.upper_spread);

    mu = std::min(mu, sym_eigenvalues(a).back());
    // full Hessian of g_i in (x, y): [[0, -B'], [-B, A]]
    Mat joint(spec.p + spec.q, spec.p + spec.q);
    for (std::size_t r2 = 0; r2 < spec.q; ++r2) {
      for (std::size_t c2 = 0; c2 < spec.q; ++c2) joint(spec.p + r2, spec.p + c2) = a(r2, c2);
      for (std::size_t c2 = 0; c2 < spec.p; ++c2) {
        joint(spec.p + r2, c2) = -b(r2, c2);
        joint(c2, spec.p + r2) = -b(r2, c2);
      }
    }
    l_g1 = std::max(l_g1, sym_spectral_norm(joint));
    cd = std::max(cd, norm(c) + norm(d));
    prob.agents.push_back(
        std::make_shared<QuadraticAgent>(std::move(a), std::move(b), std::move(r), std::move(c), std::move(d), spec.sigma));
  }
  prob.meta.mu = mu;
  prob.meta.l_f1 = 1.0;
  prob.meta.l_g1 = l_g1;
  prob.meta.l_g2 = 0.0;
  prob.meta.l_f0 = 2.0 * kDomainRadius + cd;
  prob.meta.sigma_f = prob.meta.sigma_g1 = prob.meta.sigma_g2 = spec.sigma;
  prob.meta.homogeneous_g = spec.lower_spread == 0.0;
  prob.validate();
  return prob;
}

BilevelProblem make_quadratic_testbed(std::size_t n, std::size_t p, std::size_t q, double heterogeneity,
                                      std::uint64_t seed) {
  QuadraticSpec spec;
  spec.n = n;
  spec.p = p;
  spec.q = q;
  spec.lower_spread = heterogeneity;
  spec.upper_spread = heterogeneity;
  spec.seed = seed;
  return make_quadratic(spec);
}

Vec quadratic_y_star(const BilevelProblem& prob, const Vec& x) {
  Mat a(prob.q, prob.q);
  Vec rhs(prob.q);
  for (std::size_t i = 0; i < prob.n; ++i) {
    const auto& ag = as_quadratic(prob, i);
    a += ag.a();
    rhs += matvec(ag.b(), x) + ag.b0();
  }
  return spd_solve(a, rhs);
}

Vec quadratic_hypergradient(const BilevelProblem& prob, const Vec& x) {
  // chain rule: grad Phi = mean(x - c_i) + (dy*/dx)' mean(y* - d_i), dy*/dx = mean(A)^-1 mean(B)
  Mat a(prob.q, prob.q), b(prob.q, prob.p);
  Vec cbar(prob.p), dbar(prob.q);
  for (std::size_t i = 0; i < prob.n; ++i) {
    const auto& ag = as_quadratic(prob, i);
    a += ag.a();
    b += ag.b();
    cbar += ag.c();
    dbar += ag.d();
  }
  const double inv = 1.0 / static_cast<double>(prob.n);
  a *= inv;
  b *= inv;
  cbar *= inv;
  dbar *= inv;
  const Mat dydx = spd_solve(a, b);
  const Vec ys = quadratic_y_star(prob, x);
  return (x - cbar) + matvec_t(dydx, ys - dbar);
}

// ---------------------------------------------------------------- logistic

LogisticAgent::LogisticAgent(Dataset train, Dataset val) : train_(std::move(train)), val_(std::move(val)) {
  require(train_.size() > 0 && val_.size() > 0, ErrorKind::BadParameter, "LogisticAgent: empty dataset");
  require(train_.features.cols() == val_.features.cols() && train_.labels.size() == train_.size() &&
              val_.labels.size() == val_.size(),
          ErrorKind::DimMismatch, "LogisticAgent: inconsistent datasets");
}

double LogisticAgent::f(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  double v = 0.0;
  over_rows(val_, s, [&](std::size_t e) { v += psi(margin(val_, e, y)); });
  return v / row_count(val_, s);
}

double LogisticAgent::g(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  double v = 0.0;
  over_rows(train_, s, [&](std::size_t e) { v += psi(margin(train_, e, y)); });
  v /= row_count(train_, s);
  for (std::size_t k = 0; k < q(); ++k) v += 0.5 * std::exp(x[k]) * y[k] * y[k];
  return v;
}

Vec LogisticAgent::grad_x_f(const Vec& x, const Vec& y, const Sample&) const {
  check_dims(x, p(), y, q());
  return Vec(p());
}

Vec LogisticAgent::grad_y_f(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  return weighted_label_sum(val_, s, y, [](std::size_t, double t) { return psi1(t); });
}

Vec LogisticAgent::grad_y_g(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  Vec out = weighted_label_sum(train_, s, y, [](std::size_t, double t) { return psi1(t); });
  for (std::size_t k = 0; k < q(); ++k) out[k] += std::exp(x[k]) * y[k];
  return out;
}

Mat LogisticAgent::hess_yy_g(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  Mat h = weighted_gram(train_, s, y, [](std::size_t, double t) { return psi2(t); });
  for (std::size_t k = 0; k < q(); ++k) h(k, k) += std::exp(x[k]);
  return h;
}

Vec LogisticAgent::hess_yy_g_vp(const Vec& x, const Vec& y, const Vec& v, const Sample& s) const {
  check_dims(x, p(), y, q());
  require(v.size() == q(), ErrorKind::DimMismatch, "hess_yy_g_vp: v has wrong dimension");
  Vec out = weighted_gram_vp(train_, s, y, v, [](std::size_t, double t) { return psi2(t); });
  for (std::size_t k = 0; k < q(); ++k) out[k] += std::exp(x[k]) * v[k];
  return out;
}

Mat LogisticAgent::jac_xy_g(const Vec& x, const Vec& y, const Sample&) const {
  check_dims(x, p(), y, q());
  Mat j(p(), q());
  for (std::size_t k = 0; k < q(); ++k) j(k, k) = std::exp(x[k]) * y[k];
  return j;
}

Sample LogisticAgent::draw_upper(Rng& rng, std::size_t batch) const { return draw_indices(rng, batch, val_.size()); }
Sample LogisticAgent::draw_lower(Rng& rng, std::size_t batch) const {
  return draw_indices(rng, batch, train_.size());
}

std::vector<NamedDataset> LogisticAgent::datasets() const {
  return {{"train", &train_.features, &train_.labels}, {"val", &val_.features, &val_.labels}};
}

BilevelProblem make_synthetic_logistic(const LogisticSpec& spec) {
  require(spec.n >= 1 && spec.p >= 1, ErrorKind::BadParameter, "logistic: n and p must be >= 1");
  require(spec.train_per_agent >= 1 && spec.val_per_agent >= 1, ErrorKind::BadParameter,
          "logistic: samples_per_agent must be >= 1");
  require(spec.noise_rate >= 0, ErrorKind::BadParameter, "logistic: noise rate must be >= 0");
  const RngPlan plan(spec.seed);
  Rng shared = plan.stream(spec.n, StreamRole::Data);
  const Vec tau_star = gaussian_vec(spec.p, shared);

  BilevelProblem prob;
  prob.name = "synthetic-logistic";
  prob.n = spec.n;
  prob.p = spec.p;
  prob.q = spec.p;
  double gram_train = 0.0, gram_val = 0.0, row_max = 0.0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    Rng rng = plan.stream(i, StreamRole::Data);
    const double scale = static_cast<double>(i + 1);
    std::normal_distribution<double> label_noise(0.0, 1.0);
    auto make = [&](std::size_t m) {
      Dataset d{gaussian_mat(m, spec.p, rng, scale), Vec(m)};
      for (std::size_t e = 0; e < m; ++e) {
        const double score = kernels::dot(d.features.row(e).data(), tau_star.data(), spec.p) +
                             spec.noise_rate * label_noise(rng);
        d.labels[e] = score >= 0 ? 1.0 : -1.0;
      }
      return d;
    };
    Dataset train = make(spec.train_per_agent);
    Dataset val = make(spec.val_per_agent);
    gram_train = std::max(gram_train, scaled_gram_norm(train));
    gram_val = std::max(gram_val, scaled_gram_norm(val));
    row_max = std::max({row_max, max_row_norm(train.features), max_row_norm(val.features)});
    prob.agents.push_back(std::make_shared<LogisticAgent>(std::move(train), std::move(val)));
  }
  prob.meta.mu = 1.0;
  prob.meta.l_g1 = 0.25 * gram_train + 1.0;
  prob.meta.l_f1 = 0.25 * gram_val;
  prob.meta.l_f0 = row_max;
  // |psi'''| <= 1/(6 sqrt 3) < 0.1; the regularizer contributes e^lambda = 1 at the reference point
  prob.meta.l_g2 = 0.1 * row_max * row_max * row_max + 1.0;
  prob.meta.sigma_f = row_max;
  prob.meta.sigma_g1 = row_max;
  prob.meta.sigma_g2 = 0.25 * row_max * row_max;
  prob.meta.homogeneous_g = spec.n == 1;
  prob.validate();
  return prob;
}

BilevelProblem make_synthetic_logistic(std::size_t n, std::size_t p, std::size_t q, std::size_t samples_per_agent,
                                       double noise_rate, std::uint64_t seed) {
  require(p == q, ErrorKind::BadParameter, "logistic: requires p == q (one hyperparameter per coordinate)");
  LogisticSpec spec;
  spec.n = n;
  spec.p = p;
  spec.train_per_agent = samples_per_agent;
  spec.val_per_agent = samples_per_agent;
  spec.noise_rate = noise_rate;
  spec.seed = seed;
  return make_synthetic_logistic(spec);
}

// ---------------------------------------------------------------- hyper-cleaning

HypercleaningAgent::HypercleaningAgent(Dataset train, Dataset val, std::size_t offset, std::size_t p_total,
                                       double c_r)
    : train_(std::move(train)), val_(std::move(val)), offset_(offset), p_total_(p_total), c_r_(c_r) {
  require(c_r_ > 0, ErrorKind::BadParameter, "hypercleaning: c_r must be > 0");
  require(offset_ + train_.size() <= p_total_, ErrorKind::DimMismatch, "hypercleaning: weight block out of range");
  require(train_.size() > 0 && val_.size() > 0, ErrorKind::BadParameter, "hypercleaning: empty dataset");
}

double HypercleaningAgent::f(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  double v = 0.0;
  over_rows(val_, s, [&](std::size_t e) { v += psi(margin(val_, e, y)); });
  return v / row_count(val_, s);
}

double HypercleaningAgent::g(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  double v = 0.0;
  over_rows(train_, s, [&](std::size_t e) { v += sigmoid(x[offset_ + e]) * psi(margin(train_, e, y)); });
  return v / row_count(train_, s) + c_r_ * squared_norm(y);
}

Vec HypercleaningAgent::grad_x_f(const Vec& x, const Vec& y, const Sample&) const {
  check_dims(x, p(), y, q());
  return Vec(p());
}

Vec HypercleaningAgent::grad_y_f(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  return weighted_label_sum(val_, s, y, [](std::size_t, double t) { return psi1(t); });
}

Vec HypercleaningAgent::grad_y_g(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  Vec out = weighted_label_sum(train_, s, y,
                               [&](std::size_t e, double t) { return sigmoid(x[offset_ + e]) * psi1(t); });
  out.axpy(2.0 * c_r_, y);
  return out;
}

Mat HypercleaningAgent::hess_yy_g(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  Mat h = weighted_gram(train_, s, y, [&](std::size_t e, double t) { return sigmoid(x[offset_ + e]) * psi2(t); });
  for (std::size_t k = 0; k < q(); ++k) h(k, k) += 2.0 * c_r_;
  return h;
}

Vec HypercleaningAgent::hess_yy_g_vp(const Vec& x, const Vec& y, const Vec& v, const Sample& s) const {
  check_dims(x, p(), y, q());
  require(v.size() == q(), ErrorKind::DimMismatch, "hess_yy_g_vp: v has wrong dimension");
  Vec out = weighted_gram_vp(train_, s, y, v,
                             [&](std::size_t e, double t) { return sigmoid(x[offset_ + e]) * psi2(t); });
  out.axpy(2.0 * c_r_, v);
  return out;
}

Mat HypercleaningAgent::jac_xy_g(const Vec& x, const Vec& y, const Sample& s) const {
  check_dims(x, p(), y, q());
  Mat j(p(), q());
  const double inv = 1.0 / row_count(train_, s);
  over_rows(train_, s, [&](std::size_t e) {
    const double lam = x[offset_ + e];
    const double w = inv * sigmoid(lam) * sigmoid(-lam) * psi1(margin(train_, e, y)) * train_.labels[e];
    kernels::axpy(w, train_.features.row(e).data(), j.row(offset_ + e).data(), q());
  });
  return j;
}

Sample HypercleaningAgent::draw_upper(Rng& rng, std::size_t batch) const {
  return draw_indices(rng, batch, val_.size());
}
Sample HypercleaningAgent::draw_lower(Rng& rng, std::size_t batch) const {
  return draw_indices(rng, batch, train_.size());
}

std::vector<NamedDataset> HypercleaningAgent::datasets() const {
  return {{"train", &train_.features, &train_.labels}, {"val", &val_.features, &val_.labels}};
}

BilevelProblem make_synthetic_hypercleaning(const HypercleaningSpec& spec) {
  require(spec.n >= 1 && spec.features >= 1, ErrorKind::BadParameter, "hypercleaning: n and features must be >= 1");
  require(spec.train_per_agent >= 1 && spec.val_per_agent >= 1, ErrorKind::BadParameter,
          "hypercleaning: samples_per_agent must be >= 1");
  require(spec.corruption_rate >= 0 && spec.corruption_rate <= 1, ErrorKind::BadParameter,
          "hypercleaning: corruption_rate in [0, 1]");
  require(spec.c_r > 0, ErrorKind::BadParameter, "hypercleaning: c_r must be > 0");
  require(spec.heterogeneity >= 0, ErrorKind::BadParameter, "hypercleaning: heterogeneity must be >= 0");
  const RngPlan plan(spec.seed);
  Rng shared = plan.stream(spec.n, StreamRole::Data);
  const Vec w_star = gaussian_vec(spec.features, shared);
  const std::size_t p_total = spec.n * spec.train_per_agent;

  BilevelProblem prob;
  prob.name = "synthetic-hypercleaning";
  prob.n = spec.n;
  prob.p = p_total;
  prob.q = spec.features;
  double gram_train = 0.0, gram_val = 0.0, row_max = 0.0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    Rng rng = plan.stream(i, StreamRole::Data);
    const Vec centre = gaussian_vec(spec.features, rng, spec.heterogeneity);
    auto make = [&](std::size_t m) {
      Dataset d{Mat(m, spec.features), Vec(m)};
      for (std::size_t e = 0; e < m; ++e) {
        const Vec x = centre + gaussian_vec(spec.features, rng);
        for (std::size_t k = 0; k < spec.features; ++k) d.features(e, k) = x[k];
        d.labels[e] = dot(x, w_star) >= 0 ? 1.0 : -1.0;
      }
      return d;
    };
    Dataset train = make(spec.train_per_agent);
    Dataset val = make(spec.val_per_agent);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto flips = static_cast<std::size_t>(std::floor(spec.corruption_rate * train.size()));
    for (std::size_t k = 0; k < flips; ++k) train.labels[order[k]] = -train.labels[order[k]];

    gram_train = std::max(gram_train, scaled_gram_norm(train));
    gram_val = std::max(gram_val, scaled_gram_norm(val));
    row_max = std::max({row_max, max_row_norm(train.features), max_row_norm(val.features)});
    prob.agents.push_back(std::make_shared<HypercleaningAgent>(std::move(train), std::move(val),
                                                               i * spec.train_per_agent, p_total, spec.c_r));
  }
  prob.meta.mu = 2.0 * spec.c_r;
  prob.meta.l_g1 = 0.25 * gram_train + 2.0 * spec.c_r + 0.25 * row_max / spec.train_per_agent;
  prob.meta.l_f1 = 0.25 * gram_val;
  prob.meta.l_f0 = row_max;
  prob.meta.l_g2 = 0.1 * row_max * row_max * row_max;
  prob.meta.sigma_f = row_max;
  prob.meta.sigma_g1 = row_max;
  prob.meta.sigma_g2 = 0.25 * row_max * row_max;
  prob.meta.homogeneous_g = spec.n == 1;
  prob.validate();
  return prob;
}

BilevelProblem make_synthetic_hypercleaning(std::size_t n, std::size_t features, std::size_t samples_per_agent,
                                            double corruption_rate, double c_r, std::uint64_t seed) {
  HypercleaningSpec spec;
  spec.n = n;
  spec.features = features;
  spec.train_per_agent = samples_per_agent;
  spec.val_per_agent = samples_per_agent;
  spec.corruption_rate = corruption_rate;
  spec.c_r = c_r;
  spec.seed = seed;
  return make_synthetic_hypercleaning(spec);
}

// ---------------------------------------------------------------- CSV dump

std::vector<std::filesystem::path> dump_datasets_csv(const BilevelProblem& prob, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < prob.n; ++i) {
    for (const NamedDataset& ds : prob.agent(i).datasets()) {
      std::ostringstream name;
      name << "agent" << std::setw(2) << std::setfill('0') << i << "_" << ds.name << ".csv";
      const auto path = dir / name.str();
      std::ofstream out(path);
      require(out.good(), ErrorKind::IoError, "cannot write " + path.string());
      out << std::setprecision(17);
      for (std::size_t r = 0; r < ds.features->rows(); ++r) {
        for (double v : ds.features->row(r)) out << v << ',';
        out << (*ds.labels)[r] << '\n';
      }
      require(out.good(), ErrorKind::IoError, "write failed for " + path.string());
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace dbo
