// molchan: command-line front end for the channel model toolkit.
//
// Exit codes: 0 success, 1 input or I/O error, 2 fit did not converge.

#include "molchan/dataset_io.hpp"
#include "molchan/estimation.hpp"
#include "molchan/model.hpp"
#include "molchan/noise.hpp"
#include "molchan/number_format.hpp"
#include "molchan/svg.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace molchan;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNoConvergence = 2;

struct TimeGridFlags {
  double start = 0.5;
  double end = 60.0;
  double step = 0.1;
};

struct ConfigFlags {
  double distance = 0.0;
  double spray = 0.0;
  double voltage = 0.0;
};

void setup_logging() {
  auto logger = spdlog::stderr_logger_st("molchan");
  logger->set_pattern("[%l] %v");
  logger->set_level(spdlog::level::warn);
  if (const char* env = std::getenv("MOLCHAN_LOG")) {
    const std::string level = env;
    if (level == "off") {
      logger->set_level(spdlog::level::off);
    } else if (level == "info") {
      logger->set_level(spdlog::level::info);
    } else if (level == "debug") {
      logger->set_level(spdlog::level::debug);
    }
  }
  spdlog::set_default_logger(logger);
}

void add_time_flags(CLI::App* cmd, TimeGridFlags& tg) {
  cmd->add_option("--t-start", tg.start, "First sample time (s)")->capture_default_str();
  cmd->add_option("--t-end", tg.end, "Last sample time (s)")->capture_default_str();
  cmd->add_option("--t-step", tg.step, "Sample spacing (s)")->capture_default_str();
}

void add_config_flags(CLI::App* cmd, ConfigFlags& cf, bool required) {
  auto* d = cmd->add_option("--distance", cf.distance, "Distance (m)");
  auto* s = cmd->add_option("--spray", cf.spray, "Spray duration (ms)");
  auto* v = cmd->add_option("--voltage", cf.voltage, "Initial voltage (V)");
  if (required) {
    d->required();
    s->required();
    v->required();
  }
}

SystemConfig to_config(const ConfigFlags& cf) {
  const SystemConfig config{cf.distance, cf.spray, cf.voltage};
  config.validate();
  return config;
}

CoefficientSurfaces load_surfaces(const std::string& source) {
  if (source == "paper") {
    return kPaperSurfaces;
  }
  return read_surfaces_file(source);
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open '" + out_path + "' for writing");
  }
  out << text;
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create directory '" + dir.string() + "'");
  }
}

std::string fmt(double v) { return format_shortest(v); }

// ---------------------------------------------------------------------------

struct FitFlags {
  std::string trace_path;
  double fixed_b = 0.0;
  int max_iterations = 200;
  double tolerance = 1e-8;
  double window_start = 0.1;
  std::string out;
};

int run_fit(const FitFlags& flags, bool fixed) {
  const Trace trace = read_trace_file(flags.trace_path);
  FitOptions options;
  options.max_iterations = flags.max_iterations;
  options.relative_sse_tolerance = flags.tolerance;
  options.fit_window_start = flags.window_start;

  const FitResult fit =
      fixed ? fit_channel_fixed_b(trace, flags.fixed_b, options) : fit_channel(trace, options);

  std::cout << "a=" << fmt(fit.coefficients.a) << "\n"
            << "b=" << fmt(fit.coefficients.b) << "\n"
            << "c=" << fmt(fit.coefficients.c) << "\n"
            << "rmse=" << fmt(fit.rmse) << "\n"
            << "sse=" << fmt(fit.sse) << "\n"
            << "samples=" << fit.sample_count << "\n"
            << "iterations=" << fit.iterations << "\n"
            << "converged=" << (fit.converged ? "true" : "false") << "\n";

  if (!flags.out.empty()) {
    const double start = std::max(options.fit_window_start, options.eval.t_min);
    std::string csv = "time_s,observed,predicted,residual\n";
    for (std::size_t k = 0; k < trace.size(); ++k) {
      if (trace.times[k] < start) {
        continue;
      }
      const double predicted =
          eval_impulse_response(trace.times[k], fit.coefficients, trace.config.distance, options.eval);
      csv += fmt(trace.times[k]) + "," + fmt(trace.values[k]) + "," + fmt(predicted) + "," +
             fmt(trace.values[k] - predicted) + "\n";
    }
    emit(csv, flags.out);
  }
  return fit.converged ? kExitOk : kExitNoConvergence;
}

struct CalibrateFlags {
  std::string dataset_dir;
  std::string out_dir;
  unsigned threads = 1;
  int max_iterations = 200;
  double tolerance = 1e-8;
};

int run_calibrate(const CalibrateFlags& flags) {
  const auto traces = read_trace_directory(flags.dataset_dir);
  if (traces.empty()) {
    throw std::runtime_error("no trace files (*.csv) in '" + flags.dataset_dir + "'");
  }
  spdlog::info("calibrating on {} traces", traces.size());
  FitOptions options;
  options.max_iterations = flags.max_iterations;
  options.relative_sse_tolerance = flags.tolerance;
  const CalibrationResult result = calibrate(traces, options, flags.threads);

  const fs::path out(flags.out_dir);
  ensure_directory(out);
  write_surfaces_file(out / "surfaces.txt", result.surfaces);

  std::string table = "distance_m,spray_ms,init_voltage_V,mean_a,std_a,mean_c,std_c,trial_count\n";
  for (const auto& row : result.table.rows) {
    table += fmt(row.config.distance) + "," + fmt(row.config.spray_duration) + "," +
             fmt(row.config.initial_voltage) + "," + fmt(row.mean_a) + "," + fmt(row.std_a) + "," +
             fmt(row.mean_c) + "," + fmt(row.std_c) + "," + std::to_string(row.trial_count) + "\n";
  }
  emit(table, (out / "table.csv").string());

  std::string fits = "trace,distance_m,spray_ms,init_voltage_V,trial,free_b,a,c,rmse,converged\n";
  std::size_t free_nc = 0;
  std::size_t refit_nc = 0;
  for (std::size_t i = 0; i < result.per_trace_fits.size(); ++i) {
    const auto& tf = result.per_trace_fits[i];
    const auto& free = result.free_fits[i];
    free_nc += free.fit.converged ? 0 : 1;
    refit_nc += tf.fit.converged ? 0 : 1;
    fits += std::to_string(tf.trace_index) + "," + fmt(tf.config.distance) + "," +
            fmt(tf.config.spray_duration) + "," + fmt(tf.config.initial_voltage) + "," +
            std::to_string(tf.trial_id) + "," + fmt(free.fit.coefficients.b) + "," +
            fmt(tf.fit.coefficients.a) + "," + fmt(tf.fit.coefficients.c) + "," +
            fmt(tf.fit.rmse) + "," + (tf.fit.converged ? "true" : "false") + "\n";
  }
  emit(fits, (out / "fits.csv").string());

  std::string diag;
  diag += "traces=" + std::to_string(traces.size()) + "\n";
  diag += "configs=" + std::to_string(result.table.rows.size()) + "\n";
  diag += "b_star=" + fmt(result.surfaces.b_star) + "\n";
  diag += "f_rmse=" + fmt(result.diagnostics.f_rmse) + "\n";
  diag += "g_rmse=" + fmt(result.diagnostics.g_rmse) + "\n";
  diag += "L_rmse=" + fmt(result.diagnostics.L_rmse) + "\n";
  diag += "free_fit_nonconverged=" + std::to_string(free_nc) + "\n";
  diag += "refit_nonconverged=" + std::to_string(refit_nc) + "\n";
  emit(diag, (out / "diagnostics.txt").string());

  std::cout << write_surfaces(result.surfaces);
  return kExitOk;
}

struct PredictFlags {
  ConfigFlags config;
  std::string surfaces = "paper";
  TimeGridFlags time;
  std::string out;
  std::string svg;
};

int run_predict(const PredictFlags& flags) {
  const SystemConfig config = to_config(flags.config);
  const CoefficientSurfaces surfaces = load_surfaces(flags.surfaces);
  const auto times = uniform_time_grid(flags.time.start, flags.time.end, flags.time.step);
  const auto values = predict_trace(config, surfaces, times);

  std::string csv = "time_s,value\n";
  for (std::size_t k = 0; k < times.size(); ++k) {
    csv += fmt(times[k]) + "," + fmt(values[k]) + "\n";
  }
  emit(csv, flags.out);

  if (!flags.svg.empty()) {
    PlotSpec spec;
    spec.title = "Predicted response, d=" + fmt(config.distance) + " m, s=" +
                 fmt(config.spray_duration) + " ms, v=" + fmt(config.initial_voltage) + " V";
    spec.log_y = true;
    emit(render_line_chart(spec, {{"model", times, values}}), flags.svg);
  }
  return kExitOk;
}

struct SimulateFlags {
  ConfigFlags config;
  bool dataset = false;
  std::vector<double> distances;
  std::vector<double> sprays;
  std::vector<double> voltages;
  std::string surfaces = "paper";
  std::uint64_t seed = 1;
  int trials = 1;
  bool sigma_zero = false;
  TimeGridFlags time;
  std::string out;
};

int run_simulate(const SimulateFlags& flags, bool trials_given) {
  NoiseSpec spec;
  spec.surfaces = load_surfaces(flags.surfaces);
  if (flags.sigma_zero) {
    spec.distribution = NoiseDistribution::none;
  }
  const auto times = uniform_time_grid(flags.time.start, flags.time.end, flags.time.step);
  const fs::path out(flags.out);

  std::vector<Trace> traces;
  std::size_t clamps = 0;
  if (flags.dataset) {
    ParameterGrid grid;
    if (!flags.distances.empty()) grid.distances = flags.distances;
    if (!flags.sprays.empty()) grid.spray_durations = flags.sprays;
    if (!flags.voltages.empty()) grid.init_voltages = flags.voltages;
    const int trials = trials_given ? flags.trials : 10;
    auto data = generate_dataset(grid, spec, trials, times, flags.seed);
    traces = std::move(data.traces);
    clamps = data.amplitude_clamps;
  } else {
    const SystemConfig config = to_config(flags.config);
    if (flags.trials < 1) {
      throw std::invalid_argument("--trials must be at least 1");
    }
    for (int trial = 0; trial < flags.trials; ++trial) {
      const auto seed = derive_trace_seed(flags.seed, 0, static_cast<std::uint64_t>(trial));
      auto sim = simulate_trace(config, spec, times, seed, trial);
      clamps += sim.amplitude_clamped ? 1 : 0;
      traces.push_back(std::move(sim.trace));
    }
  }

  ensure_directory(out);
  for (const auto& trace : traces) {
    write_trace_file(out / trace_file_name(trace), trace);
  }
  std::cout << "traces=" << traces.size() << "\n"
            << "amplitude_clamps=" << clamps << "\n";
  return kExitOk;
}

struct NoiseFlags {
  ConfigFlags config;
  std::string surfaces = "paper";
  std::uint64_t seed = 1;
  std::size_t count = 10000;
  std::string out;
};

int run_noise(const NoiseFlags& flags) {
  const SystemConfig config = to_config(flags.config);
  NoiseSpec spec;
  spec.surfaces = load_surfaces(flags.surfaces);
  const auto sigma = eval_L(config, spec.surfaces);
  const auto samples = sample_noise(config, spec, flags.seed, flags.count);

  std::cout << "sigma=" << fmt(noise_sigma(config, spec)) << "\n"
            << "sigma_clamped=" << (sigma.clamped ? "true" : "false") << "\n"
            << "count=" << samples.samples.size() << "\n";
  if (samples.samples.size() >= 2) {
    const auto stats = noise_stats(samples);
    std::cout << "mean=" << fmt(stats.mean) << "\n"
              << "std=" << fmt(stats.std) << "\n";
  }
  if (!flags.out.empty()) {
    std::string csv = "noise\n";
    for (const double x : samples.samples) {
      csv += fmt(x) + "\n";
    }
    emit(csv, flags.out);
  }
  return kExitOk;
}

struct VerifyFlags {
  std::string observed_dir;
  ConfigFlags config;
  std::string surfaces = "paper";
  std::string out;
  std::string svg;
};

int run_verify(const VerifyFlags& flags) {
  const SystemConfig config = to_config(flags.config);
  const CoefficientSurfaces surfaces = load_surfaces(flags.surfaces);
  std::vector<Trace> matching;
  for (auto& trace : read_trace_directory(flags.observed_dir)) {
    if (trace.config == config) {
      matching.push_back(std::move(trace));
    }
  }
  if (matching.empty()) {
    throw std::runtime_error("no observed traces for d=" + fmt(config.distance) +
                             " s=" + fmt(config.spray_duration) + " v=" +
                             fmt(config.initial_voltage) + " in '" + flags.observed_dir + "'");
  }
  const Trace observed = mean_trace(matching);
  const EvaluationOptions eval;

  std::vector<double> times;
  std::vector<double> obs;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    if (observed.times[k] >= eval.t_min) {
      times.push_back(observed.times[k]);
      obs.push_back(observed.values[k]);
    }
  }
  if (times.empty()) {
    throw std::runtime_error("observed traces have no samples at or after t_min");
  }
  const auto predicted = predict_trace(config, surfaces, times, eval);
  const double error = rmse(obs, predicted);

  std::string csv = "time_s,predicted,observed_mean,residual\n";
  for (std::size_t k = 0; k < times.size(); ++k) {
    csv += fmt(times[k]) + "," + fmt(predicted[k]) + "," + fmt(obs[k]) + "," +
           fmt(obs[k] - predicted[k]) + "\n";
  }
  emit(csv, flags.out);

  std::ostringstream summary;
  summary << "traces=" << matching.size() << "\n"
          << "samples=" << times.size() << "\n"
          << "rmse=" << fmt(error) << "\n"
          << "in_calibrated_hull=" << (config.in_calibrated_hull() ? "true" : "false") << "\n";
  (flags.out.empty() ? std::cerr : std::cout) << summary.str();

  if (!flags.svg.empty()) {
    PlotSpec spec;
    spec.title = "Model vs. mean observation (" + std::to_string(matching.size()) + " trials)";
    spec.log_y = true;
    emit(render_line_chart(spec, {{"model", times, predicted}, {"observed mean", times, obs}}),
         flags.svg);
  }
  return kExitOk;
}

struct GridFlags {
  std::vector<double> distances;
  std::vector<double> sprays;
  std::vector<double> voltages;
  std::string out;
};

int run_grid(const GridFlags& flags) {
  ParameterGrid grid;
  if (!flags.distances.empty()) grid.distances = flags.distances;
  if (!flags.sprays.empty()) grid.spray_durations = flags.sprays;
  if (!flags.voltages.empty()) grid.init_voltages = flags.voltages;
  const auto configs = enumerate_grid(grid);
  std::string csv = "index,distance_m,spray_ms,init_voltage_V\n";
  for (std::size_t i = 0; i < configs.size(); ++i) {
    csv += std::to_string(i) + "," + fmt(configs[i].distance) + "," +
           fmt(configs[i].spray_duration) + "," + fmt(configs[i].initial_voltage) + "\n";
  }
  emit(csv, flags.out);
  return kExitOk;
}

void add_grid_flags(CLI::App* cmd, std::vector<double>& d, std::vector<double>& s,
                    std::vector<double>& v) {
  cmd->add_option("--distances", d, "Comma-separated distances (m)")->delimiter(',');
  cmd->add_option("--sprays", s, "Comma-separated spray durations (ms)")->delimiter(',');
  cmd->add_option("--voltages", v, "Comma-separated initial voltages (V)")->delimiter(',');
}

} // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"Channel model calibration and simulation for spray/metal-oxide sensor links"};
  app.require_subcommand(1);

  FitFlags fit_flags;
  auto* fit_cmd = app.add_subcommand("fit", "Fit (a, b, c) to a single trace file");
  fit_cmd->add_option("trace", fit_flags.trace_path, "Trace file")->required();
  auto* fixed_b_opt =
      fit_cmd->add_option("--fixed-b", fit_flags.fixed_b, "Hold b at this value and fit (a, c)");
  fit_cmd->add_option("--max-iterations", fit_flags.max_iterations)->capture_default_str();
  fit_cmd->add_option("--tolerance", fit_flags.tolerance, "Relative SSE tolerance")
      ->capture_default_str();
  fit_cmd->add_option("--fit-start", fit_flags.window_start, "Ignore samples before this time (s)")
      ->capture_default_str();
  fit_cmd->add_option("--out", fit_flags.out, "Residual CSV path");

  CalibrateFlags cal_flags;
  auto* cal_cmd = app.add_subcommand("calibrate", "Run the full calibration pipeline on a directory");
  cal_cmd->add_option("dataset", cal_flags.dataset_dir, "Directory of trace files")->required();
  cal_cmd->add_option("--out", cal_flags.out_dir, "Output directory")->required();
  cal_cmd->add_option("--threads", cal_flags.threads, "Worker threads (0 = all cores)")
      ->capture_default_str();
  cal_cmd->add_option("--max-iterations", cal_flags.max_iterations)->capture_default_str();
  cal_cmd->add_option("--tolerance", cal_flags.tolerance)->capture_default_str();

  PredictFlags pred_flags;
  auto* pred_cmd = app.add_subcommand("predict", "Evaluate the surface model on a time grid");
  add_config_flags(pred_cmd, pred_flags.config, true);
  pred_cmd->add_option("--surfaces", pred_flags.surfaces, "Surfaces file or 'paper'")
      ->capture_default_str();
  add_time_flags(pred_cmd, pred_flags.time);
  pred_cmd->add_option("--out", pred_flags.out, "CSV output path (default stdout)");
  pred_cmd->add_option("--svg", pred_flags.svg, "Also write an SVG plot");

  SimulateFlags sim_flags;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate noisy synthetic trace files");
  add_config_flags(sim_cmd, sim_flags.config, false);
  sim_cmd->add_flag("--dataset", sim_flags.dataset, "Simulate the whole parameter grid");
  add_grid_flags(sim_cmd, sim_flags.distances, sim_flags.sprays, sim_flags.voltages);
  sim_cmd->add_option("--surfaces", sim_flags.surfaces, "Surfaces file or 'paper'")
      ->capture_default_str();
  sim_cmd->add_option("--seed", sim_flags.seed)->capture_default_str();
  auto* trials_opt = sim_cmd->add_option("--trials", sim_flags.trials,
                                         "Trials per config (default 1, or 10 with --dataset)");
  sim_cmd->add_flag("--sigma-zero", sim_flags.sigma_zero, "Disable amplitude noise");
  add_time_flags(sim_cmd, sim_flags.time);
  sim_cmd->add_option("--out", sim_flags.out, "Output directory")->required();

  NoiseFlags noise_flags;
  auto* noise_cmd = app.add_subcommand("noise", "Draw amplitude-noise samples at a config");
  add_config_flags(noise_cmd, noise_flags.config, true);
  noise_cmd->add_option("--surfaces", noise_flags.surfaces)->capture_default_str();
  noise_cmd->add_option("--seed", noise_flags.seed)->capture_default_str();
  noise_cmd->add_option("--count", noise_flags.count)->capture_default_str();
  noise_cmd->add_option("--out", noise_flags.out, "Write samples as CSV");

  VerifyFlags ver_flags;
  auto* ver_cmd = app.add_subcommand("verify", "Compare the model with averaged observations");
  ver_cmd->add_option("observed", ver_flags.observed_dir, "Directory of trace files")->required();
  add_config_flags(ver_cmd, ver_flags.config, true);
  ver_cmd->add_option("--surfaces", ver_flags.surfaces)->capture_default_str();
  ver_cmd->add_option("--out", ver_flags.out, "Report CSV path (default stdout)");
  ver_cmd->add_option("--svg", ver_flags.svg, "Also write an SVG plot");

  GridFlags grid_flags;
  auto* grid_cmd = app.add_subcommand("grid", "Print the parameter grid as CSV");
  add_grid_flags(grid_cmd, grid_flags.distances, grid_flags.sprays, grid_flags.voltages);
  grid_cmd->add_option("--out", grid_flags.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*fit_cmd) return run_fit(fit_flags, fixed_b_opt->count() > 0);
    if (*cal_cmd) return run_calibrate(cal_flags);
    if (*pred_cmd) return run_predict(pred_flags);
    if (*sim_cmd) return run_simulate(sim_flags, trials_opt->count() > 0);
    if (*noise_cmd) return run_noise(noise_flags);
    if (*ver_cmd) return run_verify(ver_flags);
    if (*grid_cmd) return run_grid(grid_flags);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitInput;
  }
  return kExitInput;
}
