#ifndef MOLCHAN_NOISE_HPP
#define MOLCHAN_NOISE_HPP

// Additive amplitude noise. Each trial perturbs the amplitude coefficient
// once, O(t) = (f + N) * bracket^-0.65, with E[N] = 0 and std(N) = L(d,s,v).

#include "molchan/model.hpp"
#include "molchan/trace.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace molchan {

enum class NoiseDistribution {
  gaussian,
  none, // N = 0 exactly
};

struct NoiseSpec {
  CoefficientSurfaces surfaces = kPaperSurfaces;
  NoiseDistribution distribution = NoiseDistribution::gaussian;
  double sigma_floor = kSigmaFloor;
  double amplitude_floor = 1e-3;

  void validate() const;
};

struct NoiseSampleSet {
  std::vector<double> samples;
  SystemConfig config;
};

struct NoiseStats {
  double mean = 0.0;
  double std = 0.0;
};

/// N = a_fit - f(config).
double noise_sample(double a_fit, const SystemConfig& config, const CoefficientSurfaces& surfaces);

/// Standard deviation used for generation at a config (>= spec.sigma_floor).
double noise_sigma(const SystemConfig& config, const NoiseSpec& spec);

NoiseSampleSet sample_noise(const SystemConfig& config, const NoiseSpec& spec,
                            std::uint64_t rng_seed, std::size_t count);

/// Sample mean and (n-1) standard deviation; needs at least two samples.
NoiseStats noise_stats(const NoiseSampleSet& samples);

struct SimulatedTrace {
  Trace trace;
  double noise = 0.0;     // drawn N
  double amplitude = 0.0; // f + N after clamping
  bool amplitude_clamped = false;
};

SimulatedTrace simulate_trace(const SystemConfig& config, const NoiseSpec& spec,
                              std::span<const double> times, std::uint64_t rng_seed,
                              int trial_id = 0, const EvaluationOptions& opts = {});

Trace generate_noisy_trace(const SystemConfig& config, const NoiseSpec& spec,
                           std::span<const double> times, std::uint64_t rng_seed,
                           int trial_id = 0, const EvaluationOptions& opts = {});

} // namespace molchan

#endif
