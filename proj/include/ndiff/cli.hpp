#ifndef NDIFF_CLI_HPP
#define NDIFF_CLI_HPP

// Driver behind the `ndiff` executable: parse, fit, write estimates.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndiff/em.hpp"
#include "ndiff/errors.hpp"
#include "ndiff/io.hpp"
#include "ndiff/smoother.hpp"

namespace ndiff::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsageOrParseError = 1,
  kFitError = 2,
  kNotConverged = 3,
};

struct CliConfig {
  std::string input_path;
  int order = 3;
  int max_iters = 50;
  double rel_tol = 1e-3;
  std::optional<double> dense_step;
  std::optional<std::string> dense_times_path;
  std::optional<std::string> params_out_path;
  std::optional<double> fixed_r;
  bool strict = false;
  std::optional<std::string> output_path;  // stdout when unset
};

/// Throws InvalidArgument on an inconsistent configuration.
inline void validate(const CliConfig& cfg) {
  if (cfg.order < ModelOrder::kMin || cfg.order > ModelOrder::kMax)
    throw InvalidArgument("--order must be in [1, 8]");
  if (cfg.max_iters < 1) throw InvalidArgument("--max-iter must be at least 1");
  if (!(cfg.rel_tol > 0.0)) throw InvalidArgument("--tol must be positive");
  if (cfg.dense_step && cfg.dense_times_path) throw InvalidArgument("--dense-step and --dense-times are exclusive");
  if (cfg.dense_step && (!(*cfg.dense_step > 0.0) || !std::isfinite(*cfg.dense_step)))
    throw InvalidArgument("--dense-step must be positive");
  if (cfg.fixed_r && (!(*cfg.fixed_r > 0.0) || !std::isfinite(*cfg.fixed_r)))
    throw InvalidArgument("--fixed-r must be positive");
}

/// t_0, t_0 + h, ... up to and including t_end.
inline std::vector<double> dense_grid(double t0, double t_end, double step) {
  std::vector<double> out;
  const double span = t_end - t0;
  const auto n = static_cast<long long>(std::floor(span / step * (1.0 + 1e-12)));
  out.reserve(static_cast<std::size_t>(n) + 2);
  for (long long i = 0; i <= n; ++i) out.push_back(std::min(t0 + static_cast<double>(i) * step, t_end));
  if (t_end - out.back() > 1e-9 * step) out.push_back(t_end);
  else out.back() = t_end;
  return out;
}

inline nlohmann::json params_document(const FitReport& rep) {
  const Matrix p0 = rep.params.p0();
  std::vector<double> p0_flat;
  for (Eigen::Index i = 0; i < p0.rows(); ++i)
    for (Eigen::Index j = 0; j < p0.cols(); ++j) p0_flat.push_back(p0(i, j));
  return {
      {"q", rep.params.q},
      {"R", rep.params.r},
      {"m0", std::vector<double>(rep.params.m0.data(), rep.params.m0.data() + rep.params.m0.size())},
      {"P0", p0_flat},
      {"nll", rep.nll_trace.back()},
      {"nll_trace", rep.nll_trace},
      {"iterations", rep.iterations},
      {"converged", rep.converged},
      {"q_at_boundary", rep.q_at_boundary},
  };
}

inline std::vector<io::OutputRow> estimate_rows(const FitReport& rep, const std::vector<double>& times) {
  std::vector<io::OutputRow> rows;
  rows.reserve(times.size());
  for (double t : times) {
    const auto state = smoothed_at(rep.forward, rep.smoothed, t);
    rows.push_back(io::make_row(t, state.mean, state.cov));
  }
  return rows;
}

inline int run(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  TimeSeries ts;
  std::vector<double> queries;
  try {
    validate(cfg);
    ts = io::parse_input(cfg.input_path);
    if (cfg.dense_times_path) {
      queries = io::parse_times(*cfg.dense_times_path);
      if (queries.front() < ts.abscissas().front() || queries.back() > ts.abscissas().back())
        throw InvalidArgument("dense query times must lie within the data range");
    }
  } catch (const std::exception& e) {
    err << "ndiff: " << e.what() << '\n';
    return kUsageOrParseError;
  }

  FitReport rep;
  try {
    EmConfig em;
    em.max_iters = cfg.max_iters;
    em.rel_tol = cfg.rel_tol;
    em.fixed_r = cfg.fixed_r;
    rep = fit(ts, cfg.order, em);
  } catch (const std::exception& e) {
    err << "ndiff: fit failed: " << e.what() << '\n';
    return kFitError;
  }

  if (cfg.dense_step) queries = dense_grid(ts.abscissas().front(), ts.abscissas().back(), *cfg.dense_step);
  else if (!cfg.dense_times_path) queries = ts.abscissas();

  std::vector<io::OutputRow> rows;
  try {
    rows = estimate_rows(rep, queries);
  } catch (const std::exception& e) {
    err << "ndiff: dense output failed: " << e.what() << '\n';
    return kFitError;
  }

  if (cfg.output_path) {
    std::ofstream file(*cfg.output_path, std::ios::binary);
    if (!file) {
      err << "ndiff: cannot write " << *cfg.output_path << '\n';
      return kUsageOrParseError;
    }
    io::write_rows(file, rows, cfg.order);
  } else {
    io::write_rows(out, rows, cfg.order);
  }

  if (cfg.params_out_path) {
    std::ofstream file(*cfg.params_out_path, std::ios::binary);
    if (!file) {
      err << "ndiff: cannot write " << *cfg.params_out_path << '\n';
      return kUsageOrParseError;
    }
    file << params_document(rep).dump(2) << '\n';
  }

  if (!rep.converged) {
    err << "ndiff: EM did not converge in " << rep.iterations << " iterations\n";
    if (cfg.strict) return kNotConverged;
  }
  return kSuccess;
}

}  // namespace ndiff::cli

#endif  // NDIFF_CLI_HPP
