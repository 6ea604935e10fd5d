#include "molchan/dataset_io.hpp"
#include "molchan/estimation.hpp"
#include "molchan/number_format.hpp"

#include <doctest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

using namespace molchan;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("molchan_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::size_t error_line(std::string_view text) {
  try {
    parse_trace(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

} // namespace

TEST_CASE("number formatting round-trips bit-exactly") {
  CHECK(format_shortest(0.1) == "0.1");
  CHECK(format_shortest(2.0) == "2");
  CHECK(format_shortest(1e-30) == "1e-30");
  CHECK(parse_decimal(" +1.5\r") == 1.5);
  CHECK(parse_decimal("-0.25") == -0.25);
  CHECK_THROWS_AS(parse_decimal(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_decimal("1.5x"), std::invalid_argument);
  CHECK_THROWS_AS(parse_decimal("nan"), std::invalid_argument);
  CHECK_THROWS_AS(parse_decimal("inf"), std::invalid_argument);
  CHECK(parse_integer("-3") == -3);
  CHECK_THROWS_AS(parse_integer("2.5"), std::invalid_argument);

  std::mt19937_64 rng(1);
  for (int i = 0; i < 20000; ++i) {
    const double x = std::bit_cast<double>(rng());
    if (!std::isfinite(x)) continue;
    CHECK(std::bit_cast<std::uint64_t>(parse_decimal(format_shortest(x))) ==
          std::bit_cast<std::uint64_t>(x));
  }
}

TEST_CASE("parse_trace") {
  const std::string text =
      "# distance_m=2\n# spray_ms=150\n# init_voltage_V=1.3\n# trial=0\n"
      "time_s,value\n0.5,1.25\n1.0,2.5\n";
  const Trace trace = parse_trace(text);
  CHECK(trace.config == SystemConfig{2, 150, 1.3});
  CHECK(trace.trial_id == 0);
  CHECK(trace.times == std::vector<double>{0.5, 1.0});
  CHECK(trace.values == std::vector<double>{1.25, 2.5});

  SUBCASE("metadata order, CRLF, blank lines and unknown keys are tolerated") {
    const std::string loose =
        "# trial=3\r\n# operator=lab\r\n# init_voltage_V=1.3\r\n# spray_ms=150\r\n# distance_m=2\r\n"
        "\r\ntime_s,value\r\n0.5,1.25\r\n\r\n1.0,2.5\r\n";
    const Trace t = parse_trace(loose);
    CHECK(t.trial_id == 3);
    CHECK(t.values == trace.values);
  }
  SUBCASE("header-only trace is empty") {
    const Trace t = parse_trace("# distance_m=2\n# spray_ms=150\n# init_voltage_V=1.3\n# trial=0\ntime_s,value\n");
    CHECK(t.size() == 0);
  }
  SUBCASE("errors carry the offending line") {
    const std::string head = "# distance_m=2\n# spray_ms=150\n# init_voltage_V=1.3\n# trial=0\ntime_s,value\n";
    CHECK(error_line(head + "0.5,1\n2.0,3\n1.0,2\n") == 8);
    CHECK(error_line(head + "0.5,1\n0.5,2\n") == 7);
    CHECK(error_line(head + "-1,1\n") == 6);
    CHECK(error_line(head + "0.5\n") == 6);
    CHECK(error_line(head + "0.5,1,2\n") == 6);
    CHECK(error_line(head + "0.5,abc\n") == 6);
    CHECK(error_line("# distance_m=2\n# distance_m=3\n") == 2);
    CHECK(error_line("# distance_m=2\ntime,value\n") == 2);
    CHECK(error_line("# spray_ms=150\n# init_voltage_V=1.3\n# trial=0\ntime_s,value\n") == 4);
    CHECK(error_line("# distance_m=0\n# spray_ms=150\n# init_voltage_V=1.3\n# trial=0\ntime_s,value\n") == 5);
    CHECK(error_line("# distance_m=2\n") == 1);
    CHECK(error_line("# trial=x\n") == 1);
  }
}

TEST_CASE("trace text round-trip (property)") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> pos(1e-3, 300), val(-1e6, 1e6), step(1e-9, 5);
  std::uniform_int_distribution<int> len(0, 60), trial(-1, 1000);
  for (int rep = 0; rep < 200; ++rep) {
    Trace t;
    t.config = {pos(rng), pos(rng), pos(rng)};
    t.trial_id = trial(rng);
    double time = std::uniform_real_distribution<double>(0, 1)(rng);
    const int n = len(rng);
    for (int k = 0; k < n; ++k) {
      t.times.push_back(time);
      t.values.push_back(val(rng) * std::pow(10.0, std::uniform_int_distribution<int>(-20, 5)(rng)));
      time += step(rng);
    }
    const std::string text = write_trace(t);
    const Trace back = parse_trace(text);
    CHECK(back == t);
    CHECK(write_trace(back) == text);
  }
}

TEST_CASE("full-precision values survive a file round-trip") {
  const fs::path dir = fresh_dir("roundtrip");
  Trace t;
  t.config = {2, 150, 1.3};
  t.trial_id = 7;
  t.times = {0.1, 0.30000000000000004};
  t.values = {24.974892183263490, 1.0 / 3.0};
  const fs::path file = dir / trace_file_name(t);
  CHECK(file.filename() == "d2_s150_v1.3_trial7.csv");
  write_trace_file(file, t);
  CHECK(read_trace_file(file) == t);
  CHECK_THROWS_AS(read_trace_file(dir / "missing.csv"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("read_trace_directory orders by config then trial") {
  const fs::path dir = fresh_dir("directory");
  const auto times = uniform_time_grid(0.5, 2, 0.5);
  NoiseSpec spec;
  spec.distribution = NoiseDistribution::none;
  Trace late = generate_noisy_trace({3, 50, 1.0}, spec, times, 1, 0);
  Trace early1 = generate_noisy_trace({2, 100, 1.3}, spec, times, 1, 1);
  Trace early0 = generate_noisy_trace({2, 100, 1.3}, spec, times, 1, 0);
  write_trace_file(dir / "a.csv", late);
  write_trace_file(dir / "b.csv", early1);
  write_trace_file(dir / "c.csv", early0);
  write_surfaces_file(dir / "notes.txt", kPaperSurfaces);
  const auto traces = read_trace_directory(dir);
  REQUIRE(traces.size() == 3);
  CHECK(traces[0] == early0);
  CHECK(traces[1] == early1);
  CHECK(traces[2] == late);
  CHECK_THROWS_AS(read_trace_directory(dir / "nope"), std::runtime_error);

  write_trace_file(dir / "broken.csv", late);
  {
    std::ofstream(dir / "broken.csv", std::ios::app) << "0.1,1\n";
  }
  try {
    read_trace_directory(dir);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("broken.csv") != std::string::npos);
    CHECK(e.line() == 10);
  }
  fs::remove_all(dir);
}

TEST_CASE("surfaces file") {
  const std::string text = write_surfaces(kPaperSurfaces);
  CHECK(text.find("f_beta_s=0.0098\n") != std::string::npos);
  CHECK(text.find("b_star=0.195\n") != std::string::npos);
  CHECK(parse_surfaces(text) == kPaperSurfaces);
  CHECK(parse_surfaces("# comment\n\n" + text) == kPaperSurfaces);

  CHECK_THROWS_AS(parse_surfaces(text + "f_beta_d=1\n"), ParseError);
  CHECK_THROWS_AS(parse_surfaces(text + "h_beta=1\n"), ParseError);
  CHECK_THROWS_AS(parse_surfaces("f_beta_d=1\n"), ParseError);
  CHECK_THROWS_AS(parse_surfaces(text + "oops\n"), ParseError);
  CoefficientSurfaces zero_b = kPaperSurfaces;
  zero_b.b_star = 0.0;
  CHECK_THROWS_AS(parse_surfaces(write_surfaces(zero_b)), ParseError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 100; ++i) {
    CoefficientSurfaces s{{u(rng), u(rng), u(rng), u(rng)},
                          {u(rng), u(rng), u(rng)},
                          {u(rng), u(rng), u(rng), u(rng)},
                          std::abs(u(rng)) + 1e-3};
    CHECK(parse_surfaces(write_surfaces(s)) == s);
  }
}

TEST_CASE("parameter grid") {
  const auto configs = enumerate_grid({});
  REQUIRE(configs.size() == 64);
  CHECK(configs.front() == SystemConfig{2, 50, 1.0});
  CHECK(configs[1] == SystemConfig{2, 50, 1.3});
  CHECK(configs[4] == SystemConfig{2, 100, 1.0});
  CHECK(configs.back() == SystemConfig{5, 200, 1.9});
  for (const auto& c : configs) {
    CHECK(c.in_calibrated_hull());
  }

  ParameterGrid single;
  single.distances = {3};
  single.init_voltages = {1.6};
  const auto four = enumerate_grid(single);
  CHECK(four.size() == 4);
  ParameterGrid empty;
  empty.spray_durations.clear();
  CHECK_THROWS_AS(enumerate_grid(empty), std::invalid_argument);
}

TEST_CASE("uniform_time_grid") {
  const auto grid = uniform_time_grid(0.5, 60, 0.1);
  CHECK(grid.size() == 596);
  CHECK(grid.front() == 0.5);
  CHECK(std::abs(grid.back() - 60.0) < 1e-9);
  CHECK(uniform_time_grid(1, 1, 0.5).size() == 1);
  CHECK_THROWS_AS(uniform_time_grid(1, 0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(uniform_time_grid(0, 1, 0), std::invalid_argument);
}

TEST_CASE("mean_trace") {
  Trace a;
  a.config = {2, 150, 1.3};
  a.times = {1, 2, 3};
  a.values = {1, 2, 3};
  a.trial_id = 4;
  Trace b = a;
  b.values = {3, 4, 5};
  b.trial_id = 5;

  const std::vector<Trace> one{a};
  CHECK(mean_trace(one) == a);

  const std::vector<Trace> both{a, b};
  const Trace m = mean_trace(both);
  CHECK(m.values == std::vector<double>{2, 3, 4});
  CHECK(m.trial_id == kAggregateTrialId);
  CHECK(m.config == a.config);

  Trace shifted = b;
  shifted.times = {1, 2, 4};
  CHECK_THROWS_AS((mean_trace(std::vector<Trace>{a, shifted})), std::invalid_argument);
  Trace other = b;
  other.config.distance = 3;
  CHECK_THROWS_AS((mean_trace(std::vector<Trace>{a, other})), std::invalid_argument);
  CHECK_THROWS_AS((mean_trace(std::vector<Trace>{})), std::invalid_argument);
}

TEST_CASE("generate_dataset") {
  const auto times = uniform_time_grid(0.5, 60, 0.1);
  const NoiseSpec spec;

  const auto data = generate_dataset({}, spec, 10, times, 1);
  REQUIRE(data.traces.size() == 640);
  CHECK(data.traces[0].config == SystemConfig{2, 50, 1.0});
  CHECK(data.traces[9].trial_id == 9);
  CHECK(data.traces[10].config == SystemConfig{2, 50, 1.3});
  for (const auto& t : data.traces) {
    CHECK(t.times.size() == times.size());
  }

  SUBCASE("seeded generation is reproducible") {
    const auto again = generate_dataset({}, spec, 10, times, 1);
    CHECK(again.traces == data.traces);
    const auto other = generate_dataset({}, spec, 10, times, 2);
    CHECK_FALSE(other.traces == data.traces);
  }
  SUBCASE("without noise every trace equals the prediction") {
    NoiseSpec none;
    none.distribution = NoiseDistribution::none;
    const auto exact = generate_dataset({}, none, 1, times, 1);
    for (const auto& t : exact.traces) {
      if (eval_f(t.config, kPaperSurfaces) > none.amplitude_floor) {
        CHECK(t.values == predict_trace(t.config, kPaperSurfaces, times));
      }
    }
  }
  SUBCASE("per-trace seeds are distinct") {
    std::set<std::uint64_t> seeds;
    for (std::uint64_t c = 0; c < 64; ++c) {
      for (std::uint64_t k = 0; k < 10; ++k) {
        seeds.insert(derive_trace_seed(1, c, k));
      }
    }
    CHECK(seeds.size() == 640);
  }
  CHECK_THROWS_AS((generate_dataset({}, spec, 0, times, 1)), std::invalid_argument);
}
