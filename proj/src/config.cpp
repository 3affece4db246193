#include "dbo/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <system_error>

#include "dbo/error.hpp"
#include "dbo/problems.hpp"

namespace dbo {
namespace {

struct PresetEntry {
  const char* name;
  const char* text;
};

constexpr PresetEntry kPresets[] = {
    {"synthetic-logistic-fig1a",
     "problem = logistic\n"
     "agents = 20\n"
     "dim_x = 50\n"
     "dim_y = 50\n"
     "samples = 500\n"
     "noise_rate = 0.1\n"
     "ring_a = 0.4\n"
     "algorithms = dbo,dbogt,dsbo\n"
     "K = 100\n"
     "T = 10\n"
     "N = 20\n"
     "eta_x = 0.01\n"
     "eta_y = 0.01\n"
     "gamma = 0.01\n"
     "minibatch = 50\n"},
    {"hypercleaning",
     "problem = hypercleaning\n"
     "agents = 20\n"
     "dim_y = 10\n"
     "samples = 50\n"
     "heterogeneity = 1\n"
     "corruption = 0.3\n"
     "regularization = 0.001\n"
     "ring_a = 0.5\n"
     "algorithms = dbo,dbogt\n"
     "K = 30\n"
     "T = 10\n"
     "N = 20\n"
     "eta_x = 100\n"
     "eta_y = 0.1\n"
     "gamma = 0.1\n"},
    {"quadratic-smoke",
     "problem = quadratic\n"
     "agents = 5\n"
     "dim_x = 3\n"
     "dim_y = 4\n"
     "heterogeneity = 0.5\n"
     "sigma = 0.1\n"
     "ring_a = 0.5\n"
     "algorithms = dbo,dbogt,dsbo\n"
     "K = 50\n"
     "T = 10\n"
     "N = 8\n"
     "eta_x = 0.05\n"
     "eta_y = 0.05\n"},
};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  fail(ErrorKind::ParseError,
       "key '" + std::string(key) + "': cannot read '" + std::string(value) + "' as " + expected);
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t parse_count(std::string_view key, std::string_view v) { return static_cast<std::size_t>(parse_u64(key, v)); }

double parse_double(std::string_view key, std::string_view v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

ProblemKind parse_problem_kind(std::string_view key, std::string_view v) {
  if (v == "quadratic") return ProblemKind::Quadratic;
  if (v == "logistic") return ProblemKind::Logistic;
  if (v == "hypercleaning") return ProblemKind::Hypercleaning;
  bad_value(key, v, "quadratic, logistic or hypercleaning");
}

std::vector<Algorithm> parse_algorithms(std::string_view key, std::string_view v) {
  std::vector<Algorithm> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const std::string_view item = trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start));
    if (item == "dbo") {
      out.push_back(Algorithm::Dbo);
    } else if (item == "dbogt") {
      out.push_back(Algorithm::Dbogt);
    } else if (item == "dsbo") {
      out.push_back(Algorithm::Dsbo);
    } else {
      bad_value(key, v, "a comma separated list of dbo, dbogt, dsbo");
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

std::string_view to_string(ProblemKind k) noexcept {
  switch (k) {
    case ProblemKind::Quadratic: return "quadratic";
    case ProblemKind::Logistic: return "logistic";
    case ProblemKind::Hypercleaning: return "hypercleaning";
  }
  return "unknown";
}

std::size_t ExperimentConfig::repeats_for(Algorithm a) const noexcept {
  if (repeats > 0) return repeats;
  return a == Algorithm::Dsbo ? 5 : 1;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& p : kPresets) out.emplace_back(p.name);
  return out;
}

std::string preset_text(std::string_view name) {
  for (const auto& p : kPresets) {
    if (name == p.name) return std::string("name = ") + p.name + "\n" + p.text;
  }
  std::string list;
  for (const auto& n : preset_names()) list += (list.empty() ? "" : ", ") + n;
  fail(ErrorKind::ValidationError, "unknown preset '" + std::string(name) + "'; available presets: " + list);
}

ExperimentConfig preset(std::string_view name) { return parse_config_text(preset_text(name), name); }

void apply_config_value(ExperimentConfig& c, std::string_view key, std::string_view value) {
  const std::string_view v = trim(value);
  ProblemConfig& p = c.problem;
  if (key == "name") {
    if (v.empty()) bad_value(key, v, "a non-empty name");
    c.name = std::string(v);
  } else if (key == "problem") {
    p.kind = parse_problem_kind(key, v);
  } else if (key == "agents") {
    p.agents = parse_count(key, v);
  } else if (key == "dim_x") {
    p.dim_x = parse_count(key, v);
  } else if (key == "dim_y") {
    p.dim_y = parse_count(key, v);
  } else if (key == "samples") {
    p.samples = parse_count(key, v);
  } else if (key == "heterogeneity") {
    p.heterogeneity = parse_double(key, v);
  } else if (key == "noise_rate") {
    p.noise_rate = parse_double(key, v);
  } else if (key == "corruption") {
    p.corruption = parse_double(key, v);
  } else if (key == "regularization") {
    p.regularization = parse_double(key, v);
  } else if (key == "sigma") {
    p.sigma = parse_double(key, v);
  } else if (key == "data_seed") {
    p.data_seed = parse_u64(key, v);
  } else if (key == "ring_a" || key == "a") {
    c.ring_a = parse_double(key, v);
  } else if (key == "algorithms" || key == "algorithm") {
    c.algorithms = parse_algorithms(key, v);
  } else if (key == "K") {
    c.K = parse_count(key, v);
  } else if (key == "T") {
    c.T = parse_count(key, v);
  } else if (key == "N") {
    c.N = parse_count(key, v);
  } else if (key == "M") {
    c.M = parse_count(key, v);
  } else if (key == "eta_x") {
    c.eta_x.base = parse_double(key, v);
  } else if (key == "eta_x_tau") {
    c.eta_x.tau = parse_double(key, v);
  } else if (key == "eta_y") {
    c.eta_y.base = parse_double(key, v);
  } else if (key == "eta_y_tau") {
    c.eta_y.tau = parse_double(key, v);
  } else if (key == "gamma") {
    if (v == "default") {
      c.gamma.reset();
    } else {
      const double tau = c.gamma ? c.gamma->tau : 0.0;
      c.gamma = StepSchedule{parse_double(key, v), tau};
    }
  } else if (key == "gamma_tau") {
    const double tau = parse_double(key, v);
    if (!c.gamma) fail(ErrorKind::ParseError, "key 'gamma_tau': set gamma to a number first");
    c.gamma->tau = tau;
  } else if (key == "epsilon") {
    c.epsilon = parse_double(key, v);
  } else if (key == "minibatch") {
    c.minibatch = parse_count(key, v);
  } else if (key == "seed") {
    c.seed = parse_u64(key, v);
  } else if (key == "repeats") {
    c.repeats = v == "auto" ? 0 : parse_count(key, v);
  } else if (key == "workers") {
    c.workers = parse_count(key, v);
  } else if (key == "warm_start_cg") {
    c.warm_start_cg = parse_bool(key, v);
  } else if (key == "warm_start_jhip") {
    c.warm_start_jhip = parse_bool(key, v);
  } else if (key == "persist_inner_tracker") {
    c.persist_inner_tracker = parse_bool(key, v);
  } else if (key == "record_lemma_accumulators") {
    c.record_lemma_accumulators = parse_bool(key, v);
  } else if (key == "oracle_tol") {
    c.oracle_tol = parse_double(key, v);
  } else {
    fail(ErrorKind::ParseError, "unknown key '" + std::string(key) + "'");
  }
}

ExperimentConfig parse_config_text(std::string_view text, std::string_view origin) {
  ExperimentConfig cfg;
  std::vector<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(ErrorKind::ParseError, where + "expected key = value, got '" + std::string(line) + "'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) fail(ErrorKind::ParseError, where + "missing key");
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      fail(ErrorKind::ParseError, where + "key '" + key + "' given twice");
    }
    if (key == "preset") {
      if (!seen.empty()) fail(ErrorKind::ParseError, where + "key 'preset' must come before every other key");
      cfg = preset(value);
    } else {
      try {
        apply_config_value(cfg, key, value);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::ParseError) throw;
        const std::string msg = e.what();
        fail(ErrorKind::ParseError, where + msg.substr(msg.find(": ") + 2));
      }
    }
    seen.push_back(key);
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::IoError, "cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str(), path.string());
}

std::string serialize_config(const ExperimentConfig& c) {
  const ProblemConfig& p = c.problem;
  std::ostringstream o;
  o << "name = " << c.name << '\n';
  o << "problem = " << to_string(p.kind) << '\n';
  o << "agents = " << p.agents << '\n';
  o << "dim_x = " << p.dim_x << '\n';
  o << "dim_y = " << p.dim_y << '\n';
  o << "samples = " << p.samples << '\n';
  o << "heterogeneity = " << fmt(p.heterogeneity) << '\n';
  o << "noise_rate = " << fmt(p.noise_rate) << '\n';
  o << "corruption = " << fmt(p.corruption) << '\n';
  o << "regularization = " << fmt(p.regularization) << '\n';
  o << "sigma = " << fmt(p.sigma) << '\n';
  o << "data_seed = " << p.data_seed << '\n';
  o << "ring_a = " << fmt(c.ring_a) << '\n';
  o << "algorithms = ";
  for (std::size_t i = 0; i < c.algorithms.size(); ++i) o << (i ? "," : "") << to_string(c.algorithms[i]);
  o << '\n';
  o << "K = " << c.K << '\n';
  o << "T = " << c.T << '\n';
  o << "N = " << c.N << '\n';
  o << "M = " << c.M << '\n';
  o << "eta_x = " << fmt(c.eta_x.base) << '\n';
  o << "eta_x_tau = " << fmt(c.eta_x.tau) << '\n';
  o << "eta_y = " << fmt(c.eta_y.base) << '\n';
  o << "eta_y_tau = " << fmt(c.eta_y.tau) << '\n';
  if (c.gamma) {
    o << "gamma = " << fmt(c.gamma->base) << '\n';
    o << "gamma_tau = " << fmt(c.gamma->tau) << '\n';
  } else {
    o << "gamma = default\n";
  }
  o << "epsilon = " << fmt(c.epsilon) << '\n';
  o << "minibatch = " << c.minibatch << '\n';
  o << "seed = " << c.seed << '\n';
  o << "repeats = ";
  if (c.repeats == 0) {
    o << "auto\n";
  } else {
    o << c.repeats << '\n';
  }
  o << "workers = " << c.workers << '\n';
  o << "warm_start_cg = " << (c.warm_start_cg ? "true" : "false") << '\n';
  o << "warm_start_jhip = " << (c.warm_start_jhip ? "true" : "false") << '\n';
  o << "persist_inner_tracker = " << (c.persist_inner_tracker ? "true" : "false") << '\n';
  o << "record_lemma_accumulators = " << (c.record_lemma_accumulators ? "true" : "false") << '\n';
  o << "oracle_tol = " << fmt(c.oracle_tol) << '\n';
  return o.str();
}

void validate_config(const ExperimentConfig& c) {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::ValidationError, msg); };
  const ProblemConfig& p = c.problem;
  check(c.ring_a > 0.0 && c.ring_a < 1.0, "a in (0,1)");
  check(p.agents == 1 || p.agents >= 3, "agents must be 1 or >= 3 (ring network)");
  check(p.dim_y >= 1 && p.samples >= 1, "dim_y and samples must be >= 1");
  check(p.kind != ProblemKind::Quadratic || p.dim_x >= 1, "dim_x must be >= 1");
  check(p.kind != ProblemKind::Logistic || p.dim_x == p.dim_y, "logistic problem requires dim_x == dim_y");
  check(p.heterogeneity >= 0.0, "heterogeneity must be >= 0");
  check(p.noise_rate >= 0.0, "noise_rate must be >= 0");
  check(p.corruption >= 0.0 && p.corruption <= 1.0, "corruption in [0,1]");
  check(p.regularization > 0.0, "regularization must be > 0");
  check(p.sigma >= 0.0, "sigma must be >= 0");
  check(!c.algorithms.empty(), "algorithms must not be empty");
  check(c.K >= 1 && c.T >= 1 && c.N >= 1 && c.M >= 1, "K, T, N and M must be >= 1");
  check(c.eta_x.base > 0.0 && c.eta_x.tau >= 0.0, "eta_x must be > 0");
  check(c.eta_y.base > 0.0 && c.eta_y.tau >= 0.0, "eta_y must be > 0");
  check(!c.gamma || (c.gamma->base > 0.0 && c.gamma->tau >= 0.0), "gamma must be > 0");
  check(c.epsilon > 0.0, "epsilon must be > 0");
  check(c.minibatch >= 1 && c.workers >= 1, "minibatch and workers must be >= 1");
  check(c.oracle_tol > 0.0, "oracle_tol must be > 0");
}

BilevelProblem build_problem(const ProblemConfig& p) {
  switch (p.kind) {
    case ProblemKind::Quadratic: {
      QuadraticSpec s;
      s.n = p.agents;
      s.p = p.dim_x;
      s.q = p.dim_y;
      s.lower_spread = p.heterogeneity;
      s.upper_spread = p.heterogeneity;
      s.sigma = p.sigma;
      s.seed = p.data_seed;
      return make_quadratic(s);
    }
    case ProblemKind::Logistic: {
      LogisticSpec s;
      s.n = p.agents;
      s.p = p.dim_y;
      s.train_per_agent = p.samples;
      s.val_per_agent = p.samples;
      s.noise_rate = p.noise_rate;
      s.seed = p.data_seed;
      return make_synthetic_logistic(s);
    }
    case ProblemKind::Hypercleaning: {
      HypercleaningSpec s;
      s.n = p.agents;
      s.features = p.dim_y;
      s.train_per_agent = p.samples;
      s.val_per_agent = p.samples;
      s.corruption_rate = p.corruption;
      s.c_r = p.regularization;
      s.heterogeneity = p.heterogeneity;
      s.seed = p.data_seed;
      return make_synthetic_hypercleaning(s);
    }
  }
  fail(ErrorKind::ValidationError, "unknown problem kind");
}

ResolvedExperiment resolve(const ExperimentConfig& cfg) {
  validate_config(cfg);
  BilevelProblem prob = build_problem(cfg.problem);
  WeightMatrix w = prob.n == 1 ? trivial_network() : build_ring(prob.n, cfg.ring_a);
  return {std::move(prob), std::move(w)};
}

RunConfig run_config_for(const ExperimentConfig& c, const BilevelProblem& prob, Algorithm a, std::uint64_t seed) {
  RunConfig r;
  r.algorithm = a;
  r.regime = {a == Algorithm::Dsbo, prob.meta.homogeneous_g};
  r.K = c.K;
  r.T = c.T;
  r.N = c.N;
  r.M = c.M;
  r.eta_x = c.eta_x;
  r.eta_y = c.eta_y;
  r.gamma = c.gamma;
  r.epsilon = c.epsilon;
  r.minibatch = c.minibatch;
  r.seed = seed;
  r.warm_start_cg = c.warm_start_cg;
  r.warm_start_jhip = c.warm_start_jhip;
  r.persist_inner_tracker = c.persist_inner_tracker;
  r.record_lemma_accumulators = c.record_lemma_accumulators;
  r.workers = c.workers;
  r.oracle_tol = c.oracle_tol;
  r.validate(prob);
  return r;
}

}  // namespace dbo
