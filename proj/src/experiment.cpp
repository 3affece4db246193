#include "dbo/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "dbo/error.hpp"
#include "dbo/rng.hpp"

namespace dbo {
namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  require(out.good(), ErrorKind::IoError, "write failed for " + path.string());
}

std::optional<double> final_grad(const RunMetrics& m) { return m.rows.back().grad_norm_mean; }

std::optional<double> best_grad(const RunMetrics& m) {
  std::optional<double> best;
  for (const auto& r : m.rows) {
    if (r.grad_norm_mean && (!best || *r.grad_norm_mean < *best)) best = r.grad_norm_mean;
  }
  return best;
}

struct Moments {
  double mean = 0.0;
  double std = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

std::string summary_text(const ExperimentConfig& cfg, const std::vector<RunOutcome>& runs) {
  std::ostringstream o;
  o << "algorithm,repeat,seed,final_grad_norm,best_grad_norm,final_consensus\n";
  for (const auto& r : runs) {
    o << to_string(r.algorithm) << ',' << r.repeat << ',' << r.seed << ',' << fmt(final_grad(r.metrics)) << ','
      << fmt(best_grad(r.metrics)) << ',' << fmt(r.metrics.rows.back().consensus) << '\n';
  }
  for (Algorithm a : cfg.algorithms) {
    std::vector<double> fin, best, cons;
    for (const auto& r : runs) {
      if (r.algorithm != a) continue;
      if (auto v = final_grad(r.metrics)) fin.push_back(*v);
      if (auto v = best_grad(r.metrics)) best.push_back(*v);
      cons.push_back(r.metrics.rows.back().consensus);
    }
    const Moments f = moments(fin), b = moments(best), c = moments(cons);
    o << to_string(a) << ",mean,," << fmt(f.mean) << ',' << fmt(b.mean) << ',' << fmt(c.mean) << '\n';
    o << to_string(a) << ",std,," << fmt(f.std) << ',' << fmt(b.std) << ',' << fmt(c.std) << '\n';
  }
  return o.str();
}

std::string plotdata_text(const ExperimentConfig& cfg, const std::vector<RunOutcome>& runs) {
  std::ostringstream o;
  o << 'k';
  for (Algorithm a : cfg.algorithms) o << ",log10_grad_norm_" << to_string(a);
  o << '\n';
  for (std::size_t k = 0; k <= cfg.K; ++k) {
    o << k;
    for (Algorithm a : cfg.algorithms) {
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& r : runs) {
        if (r.algorithm == a && r.metrics.rows[k].grad_norm_mean) {
          sum += *r.metrics.rows[k].grad_norm_mean;
          ++count;
        }
      }
      o << ',';
      if (count > 0) o << fmt(std::log10(sum / static_cast<double>(count)));
    }
    o << '\n';
  }
  return o.str();
}

}  // namespace

double ExperimentSummary::mean_final_grad_norm(Algorithm a) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& r : runs) {
    if (r.algorithm == a) {
      if (auto v = final_grad(r.metrics)) {
        sum += *v;
        ++count;
      }
    }
  }
  return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

std::uint64_t repeat_seed(std::uint64_t seed, std::size_t r) { return r == 0 ? seed : RngPlan(seed).repeat(r).master(); }

ExperimentSummary run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  const ResolvedExperiment ex = resolve(cfg);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, ErrorKind::IoError, "cannot create " + out_dir.string() + ": " + ec.message());

  ExperimentSummary s;
  for (Algorithm a : cfg.algorithms) {
    // validate every algorithm before spending time on any run
    run_config_for(cfg, ex.problem, a, cfg.seed);
  }
  for (Algorithm a : cfg.algorithms) {
    for (std::size_t r = 0; r < cfg.repeats_for(a); ++r) {
      RunOutcome o;
      o.algorithm = a;
      o.repeat = r;
      o.seed = repeat_seed(cfg.seed, r);
      o.metrics = run(ex.problem, ex.network, run_config_for(cfg, ex.problem, a, o.seed));
      o.csv = out_dir / (std::string(to_string(a)) + "_r" + std::to_string(r) + ".csv");
      std::ostringstream text;
      write_metrics_csv(o.metrics, text);
      write_file(o.csv, text.str());
      s.runs.push_back(std::move(o));
    }
  }
  s.summary_csv = out_dir / "summary.csv";
  s.plotdata_csv = out_dir / "plotdata.csv";
  write_file(s.summary_csv, summary_text(cfg, s.runs));
  write_file(s.plotdata_csv, plotdata_text(cfg, s.runs));
  write_file(out_dir / "config.txt", serialize_config(cfg));
  return s;
}

RateProbeResult rate_probe(const ExperimentConfig& cfg, Algorithm a, const std::vector<std::size_t>& k_list,
                           std::size_t repeats, double scale) {
  require(!k_list.empty(), ErrorKind::ValidationError, "k_list must not be empty");
  require(std::is_sorted(k_list.begin(), k_list.end()) && std::adjacent_find(k_list.begin(), k_list.end()) == k_list.end(),
          ErrorKind::ValidationError, "k_list must be strictly ascending");
  require(k_list.front() >= 1, ErrorKind::ValidationError, "k_list entries must be >= 1");
  require(scale > 0.0, ErrorKind::ValidationError, "scale must be > 0");
  const ResolvedExperiment ex = resolve(cfg);
  if (repeats == 0) repeats = cfg.repeats_for(a);

  RateProbeResult out;
  out.algorithm = a;
  for (std::size_t K : k_list) {
    RunConfig rc;
    switch (a) {
      case Algorithm::Dbo: rc = theorem1_preset(ex.problem, ex.network, K, scale); break;
      case Algorithm::Dbogt: rc = theorem2_preset(ex.problem, ex.network, K, scale); break;
      case Algorithm::Dsbo: rc = theorem3_preset(ex.problem, ex.network, K, scale); break;
    }
    rc.workers = cfg.workers;
    rc.oracle_tol = cfg.oracle_tol;
    double sum = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
      rc.seed = repeat_seed(cfg.seed, r);
      const RunMetrics m = run(ex.problem, ex.network, rc);
      sum += *m.rows.back().T_K / static_cast<double>(K + 1);
    }
    out.rows.push_back({K, sum / static_cast<double>(repeats)});
  }
  if (out.rows.size() >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(out.rows.size());
    for (const auto& r : out.rows) {
      const double x = std::log(static_cast<double>(r.K)), y = std::log(r.avg_sq_grad_norm);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    out.slope = (sxy - sx * sy / n) / (sxx - sx * sx / n);
  }
  return out;
}

void write_rate_probe_csv(const RateProbeResult& r, std::ostream& out) {
  out << "algorithm,K,avg_sq_grad_norm,ratio_to_previous,fitted_slope\n";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    out << to_string(r.algorithm) << ',' << r.rows[i].K << ',' << fmt(r.rows[i].avg_sq_grad_norm) << ',';
    if (i > 0) out << fmt(r.rows[i - 1].avg_sq_grad_norm / r.rows[i].avg_sq_grad_norm);
    out << ',' << fmt(r.slope) << '\n';
  }
}

}  // namespace dbo
