#ifndef MOLCHAN_DATASET_IO_HPP
#define MOLCHAN_DATASET_IO_HPP

// Trace and surface files, the experiment parameter grid, and synthetic
// calibration datasets.
//
// Trace file (UTF-8, LF):
//   # distance_m=<decimal>
//   # spray_ms=<decimal>
//   # init_voltage_V=<decimal>
//   # trial=<integer>
//   time_s,value
//   <decimal>,<decimal>
//   ...
// Numbers are written in the shortest form that parses back bit-exactly.

#include "molchan/model.hpp"
#include "molchan/noise.hpp"
#include "molchan/trace.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace molchan {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

Trace parse_trace(std::string_view text);
std::string write_trace(const Trace& trace);

/// Throws std::runtime_error if the file cannot be read; ParseError
/// messages are prefixed with the path.
Trace read_trace_file(const std::filesystem::path& path);
void write_trace_file(const std::filesystem::path& path, const Trace& trace);

/// All *.csv trace files in a directory, ordered by (config, trial, name).
std::vector<Trace> read_trace_directory(const std::filesystem::path& dir);

/// Canonical file name for a trace, e.g. "d2_s150_v1.3_trial0.csv".
std::string trace_file_name(const Trace& trace);

/// key=value lines: f_beta_{d,s,v,0}, g_beta_{d,v,0}, L_beta_{d,s,v,0}, b_star.
CoefficientSurfaces parse_surfaces(std::string_view text);
std::string write_surfaces(const CoefficientSurfaces& surfaces);
CoefficientSurfaces read_surfaces_file(const std::filesystem::path& path);
void write_surfaces_file(const std::filesystem::path& path, const CoefficientSurfaces& surfaces);

struct ParameterGrid {
  std::vector<double> distances{2.0, 3.0, 4.0, 5.0};
  std::vector<double> spray_durations{50.0, 100.0, 150.0, 200.0};
  std::vector<double> init_voltages{1.0, 1.3, 1.6, 1.9};

  void validate() const;
};

/// Cartesian product, distance-major, then spray duration, then voltage.
std::vector<SystemConfig> enumerate_grid(const ParameterGrid& grid);

/// start, start + step, ... up to end inclusive (within 1e-9 steps).
std::vector<double> uniform_time_grid(double start, double end, double step);

/// Pointwise mean; all traces must share times and config.
Trace mean_trace(std::span<const Trace> traces);

/// Per-trace seed: splitmix64 chained over (root, config index, trial index).
std::uint64_t derive_trace_seed(std::uint64_t root_seed, std::uint64_t config_index,
                                std::uint64_t trial_index);

struct SyntheticDataset {
  std::vector<Trace> traces;
  std::size_t amplitude_clamps = 0;
};

SyntheticDataset generate_dataset(const ParameterGrid& grid, const NoiseSpec& spec,
                                  int trials_per_config, std::span<const double> times,
                                  std::uint64_t rng_seed, const EvaluationOptions& opts = {});

} // namespace molchan

#endif
