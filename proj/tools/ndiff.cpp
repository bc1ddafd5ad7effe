// ndiff: estimate a signal and its derivatives from noisy samples.
//
//   ndiff data.csv --order 3 --dense-step 0.01 --params-out fit.json

#include <iostream>

#include <CLI11.hpp>

#include "ndiff/cli.hpp"

int main(int argc, char** argv) {
  ndiff::cli::CliConfig cfg;
  CLI::App app{"Smoothed derivative estimates from noisy time series (CSV header: t,y)"};
  app.add_option("input", cfg.input_path, "Input CSV with header t,y")->required();
  app.add_option("--order", cfg.order, "State dimension d (signal plus d-1 derivatives)")
      ->check(CLI::Range(ndiff::ModelOrder::kMin, ndiff::ModelOrder::kMax))
      ->capture_default_str();
  app.add_option("--max-iter", cfg.max_iters, "Maximum EM iterations")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--tol", cfg.rel_tol, "Relative displacement change that stops EM")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  auto* step = app.add_option("--dense-step", cfg.dense_step, "Emit estimates on a uniform grid with this step")
                   ->check(CLI::PositiveNumber);
  auto* times = app.add_option("--dense-times", cfg.dense_times_path, "Emit estimates at the times listed in this file");
  step->excludes(times);
  app.add_option("--params-out", cfg.params_out_path, "Write fitted parameters as JSON");
  app.add_option("--fixed-r", cfg.fixed_r, "Hold the measurement variance at this value")->check(CLI::PositiveNumber);
  app.add_flag("--strict", cfg.strict, "Exit with status 3 if EM does not converge");
  app.add_option("--output,-o", cfg.output_path, "Write estimates here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ndiff::cli::kUsageOrParseError;
  }
  return ndiff::cli::run(cfg, std::cout, std::cerr);
}
