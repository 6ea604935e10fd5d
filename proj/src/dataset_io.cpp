#include "molchan/dataset_io.hpp"

#include "molchan/number_format.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

namespace molchan {

namespace {

constexpr std::string_view kHeader = "time_s,value";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

// Splits on '\n', keeping empty lines so numbering stays exact.
std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_all(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  }
  out << text;
  if (!out) {
    throw std::runtime_error("write to '" + path.string() + "' failed");
  }
}

double field_decimal(std::string_view field, std::size_t line, std::string_view what) {
  try {
    return parse_decimal(field);
  } catch (const std::invalid_argument& e) {
    throw ParseError(line, std::string(what) + ": " + e.what());
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::array<std::string_view, 12> kSurfaceKeys = {
    "f_beta_d", "f_beta_s", "f_beta_v", "f_beta_0", "g_beta_d", "g_beta_v",
    "g_beta_0", "L_beta_d", "L_beta_s", "L_beta_v", "L_beta_0", "b_star"};

std::array<double*, 12> surface_fields(CoefficientSurfaces& s) {
  return {&s.f.d, &s.f.s, &s.f.v, &s.f.intercept, &s.g.d, &s.g.v,
          &s.g.intercept, &s.L.d, &s.L.s, &s.L.v, &s.L.intercept, &s.b_star};
}

} // namespace

Trace parse_trace(std::string_view text) {
  const auto lines = split_lines(text);
  std::optional<double> distance;
  std::optional<double> spray;
  std::optional<double> voltage;
  std::optional<int> trial;

  Trace trace;
  bool in_body = false;
  std::size_t header_line = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    const std::string_view line = trim(lines[i]);
    if (line.empty()) {
      continue;
    }
    if (!in_body) {
      if (line.front() == '#') {
        const std::string_view kv = trim(line.substr(1));
        const std::size_t eq = kv.find('=');
        if (eq == std::string_view::npos) {
          throw ParseError(lineno, "metadata line must have the form '# key=value'");
        }
        const std::string_view key = trim(kv.substr(0, eq));
        const std::string_view value = kv.substr(eq + 1);
        auto set_once = [&](auto& slot, auto parsed) {
          if (slot) {
            throw ParseError(lineno, "duplicate metadata key '" + std::string(key) + "'");
          }
          slot = parsed;
        };
        if (key == "distance_m") {
          set_once(distance, field_decimal(value, lineno, "distance_m"));
        } else if (key == "spray_ms") {
          set_once(spray, field_decimal(value, lineno, "spray_ms"));
        } else if (key == "init_voltage_V") {
          set_once(voltage, field_decimal(value, lineno, "init_voltage_V"));
        } else if (key == "trial") {
          try {
            set_once(trial, static_cast<int>(parse_integer(value)));
          } catch (const std::invalid_argument& e) {
            throw ParseError(lineno, std::string("trial: ") + e.what());
          }
        }
        continue;
      }
      if (line != kHeader) {
        throw ParseError(lineno, "expected header '" + std::string(kHeader) + "'");
      }
      in_body = true;
      header_line = lineno;
      continue;
    }

    const std::size_t comma = line.find(',');
    if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos) {
      throw ParseError(lineno, "expected two comma-separated fields");
    }
    const double t = field_decimal(line.substr(0, comma), lineno, "time_s");
    const double v = field_decimal(line.substr(comma + 1), lineno, "value");
    if (t < 0.0) {
      throw ParseError(lineno, "negative time");
    }
    if (!trace.times.empty() && !(t > trace.times.back())) {
      throw ParseError(lineno, "time is not strictly increasing");
    }
    trace.times.push_back(t);
    trace.values.push_back(v);
  }

  if (!in_body) {
    throw ParseError(lines.size(), "missing header '" + std::string(kHeader) + "'");
  }
  const auto require = [&](const auto& slot, std::string_view key) {
    if (!slot) {
      throw ParseError(header_line, "missing metadata key '" + std::string(key) + "'");
    }
  };
  require(distance, "distance_m");
  require(spray, "spray_ms");
  require(voltage, "init_voltage_V");
  require(trial, "trial");

  trace.config = {*distance, *spray, *voltage};
  trace.trial_id = *trial;
  try {
    trace.config.validate();
  } catch (const std::domain_error& e) {
    throw ParseError(header_line, e.what());
  }
  return trace;
}

std::string write_trace(const Trace& trace) {
  std::string out;
  out += "# distance_m=" + format_shortest(trace.config.distance) + "\n";
  out += "# spray_ms=" + format_shortest(trace.config.spray_duration) + "\n";
  out += "# init_voltage_V=" + format_shortest(trace.config.initial_voltage) + "\n";
  out += "# trial=" + std::to_string(trace.trial_id) + "\n";
  out += kHeader;
  out += "\n";
  for (std::size_t k = 0; k < trace.times.size(); ++k) {
    out += format_shortest(trace.times[k]);
    out += ',';
    out += format_shortest(trace.values[k]);
    out += '\n';
  }
  return out;
}

Trace read_trace_file(const std::filesystem::path& path) {
  const std::string text = read_all(path);
  try {
    return parse_trace(text);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
}

void write_trace_file(const std::filesystem::path& path, const Trace& trace) {
  write_all(path, write_trace(trace));
}

std::vector<Trace> read_trace_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("'" + dir.string() + "' is not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  std::vector<std::pair<Trace, std::string>> loaded;
  loaded.reserve(files.size());
  for (const auto& f : files) {
    loaded.emplace_back(read_trace_file(f), f.filename().string());
  }
  std::stable_sort(loaded.begin(), loaded.end(), [](const auto& x, const auto& y) {
    return std::tie(x.first.config, x.first.trial_id, x.second) <
           std::tie(y.first.config, y.first.trial_id, y.second);
  });
  std::vector<Trace> traces;
  traces.reserve(loaded.size());
  for (auto& [trace, name] : loaded) {
    traces.push_back(std::move(trace));
  }
  return traces;
}

std::string trace_file_name(const Trace& trace) {
  return "d" + format_shortest(trace.config.distance) + "_s" +
         format_shortest(trace.config.spray_duration) + "_v" +
         format_shortest(trace.config.initial_voltage) + "_trial" +
         std::to_string(trace.trial_id) + ".csv";
}

CoefficientSurfaces parse_surfaces(std::string_view text) {
  CoefficientSurfaces surfaces;
  auto fields = surface_fields(surfaces);
  std::array<bool, 12> seen{};

  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    const std::string_view line = trim(lines[i]);
    if (line.empty() || line.front() == '#') {
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(lineno, "expected 'key=value'");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const auto it = std::find(kSurfaceKeys.begin(), kSurfaceKeys.end(), key);
    if (it == kSurfaceKeys.end()) {
      throw ParseError(lineno, "unknown surfaces key '" + std::string(key) + "'");
    }
    const auto idx = static_cast<std::size_t>(it - kSurfaceKeys.begin());
    if (seen[idx]) {
      throw ParseError(lineno, "duplicate key '" + std::string(key) + "'");
    }
    *fields[idx] = field_decimal(line.substr(eq + 1), lineno, key);
    seen[idx] = true;
  }
  for (std::size_t idx = 0; idx < kSurfaceKeys.size(); ++idx) {
    if (!seen[idx]) {
      throw ParseError(lines.size(), "missing surfaces key '" + std::string(kSurfaceKeys[idx]) + "'");
    }
  }
  if (!(surfaces.b_star > 0.0)) {
    throw ParseError(lines.size(), "b_star must be positive");
  }
  return surfaces;
}

std::string write_surfaces(const CoefficientSurfaces& surfaces) {
  CoefficientSurfaces copy = surfaces;
  const auto fields = surface_fields(copy);
  std::string out;
  for (std::size_t idx = 0; idx < kSurfaceKeys.size(); ++idx) {
    out += std::string(kSurfaceKeys[idx]) + "=" + format_shortest(*fields[idx]) + "\n";
  }
  return out;
}

CoefficientSurfaces read_surfaces_file(const std::filesystem::path& path) {
  const std::string text = read_all(path);
  try {
    return parse_surfaces(text);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
}

void write_surfaces_file(const std::filesystem::path& path, const CoefficientSurfaces& surfaces) {
  write_all(path, write_surfaces(surfaces));
}

void ParameterGrid::validate() const {
  if (distances.empty() || spray_durations.empty() || init_voltages.empty()) {
    throw std::invalid_argument("parameter grid: every axis needs at least one value");
  }
}

std::vector<SystemConfig> enumerate_grid(const ParameterGrid& grid) {
  grid.validate();
  std::vector<SystemConfig> configs;
  configs.reserve(grid.distances.size() * grid.spray_durations.size() * grid.init_voltages.size());
  for (const double d : grid.distances) {
    for (const double s : grid.spray_durations) {
      for (const double v : grid.init_voltages) {
        configs.push_back({d, s, v});
      }
    }
  }
  return configs;
}

std::vector<double> uniform_time_grid(double start, double end, double step) {
  if (!(step > 0.0) || !std::isfinite(start) || !std::isfinite(end) || end < start) {
    throw std::invalid_argument("time grid: need start <= end and a positive step");
  }
  const auto count = static_cast<std::size_t>(std::floor((end - start) / step + 1e-9)) + 1;
  std::vector<double> times;
  times.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    times.push_back(start + static_cast<double>(k) * step);
  }
  return times;
}

Trace mean_trace(std::span<const Trace> traces) {
  if (traces.empty()) {
    throw std::invalid_argument("mean_trace: no traces");
  }
  const Trace& first = traces.front();
  Trace out;
  out.times = first.times;
  out.config = first.config;
  out.trial_id = traces.size() == 1 ? first.trial_id : kAggregateTrialId;
  out.values.assign(first.values.size(), 0.0);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const Trace& t = traces[i];
    if (t.times != first.times) {
      throw std::invalid_argument("mean_trace: trace " + std::to_string(i) +
                                  " has a different time grid");
    }
    if (!(t.config == first.config)) {
      throw std::invalid_argument("mean_trace: trace " + std::to_string(i) +
                                  " has a different config");
    }
    if (t.values.size() != first.values.size()) {
      throw std::invalid_argument("mean_trace: trace " + std::to_string(i) + " is malformed");
    }
  }
  if (traces.size() == 1) {
    out.values = first.values;
    return out;
  }
  const auto n = static_cast<double>(traces.size());
  for (std::size_t k = 0; k < out.values.size(); ++k) {
    double sum = 0.0;
    for (const auto& t : traces) {
      sum += t.values[k];
    }
    out.values[k] = sum / n;
  }
  return out;
}

std::uint64_t derive_trace_seed(std::uint64_t root_seed, std::uint64_t config_index,
                                std::uint64_t trial_index) {
  return splitmix64(splitmix64(splitmix64(root_seed) ^ config_index) ^ trial_index);
}

SyntheticDataset generate_dataset(const ParameterGrid& grid, const NoiseSpec& spec,
                                  int trials_per_config, std::span<const double> times,
                                  std::uint64_t rng_seed, const EvaluationOptions& opts) {
  if (trials_per_config < 1) {
    throw std::invalid_argument("generate_dataset: trials_per_config must be at least 1");
  }
  const auto configs = enumerate_grid(grid);
  SyntheticDataset out;
  out.traces.reserve(configs.size() * static_cast<std::size_t>(trials_per_config));
  for (std::size_t ci = 0; ci < configs.size(); ++ci) {
    for (int trial = 0; trial < trials_per_config; ++trial) {
      const auto seed = derive_trace_seed(rng_seed, ci, static_cast<std::uint64_t>(trial));
      auto sim = simulate_trace(configs[ci], spec, times, seed, trial, opts);
      if (sim.amplitude_clamped) {
        ++out.amplitude_clamps;
      }
      out.traces.push_back(std::move(sim.trace));
    }
  }
  return out;
}

} // namespace molchan
