#include "molchan/noise.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace molchan {

namespace {

double draw(NoiseDistribution distribution, double sigma, std::mt19937_64& rng) {
  switch (distribution) {
    case NoiseDistribution::gaussian: {
      std::normal_distribution<double> normal(0.0, 1.0);
      return sigma * normal(rng);
    }
    case NoiseDistribution::none:
      return 0.0;
  }
  return 0.0;
}

} // namespace

void NoiseSpec::validate() const {
  if (!(sigma_floor > 0.0) || !(amplitude_floor > 0.0)) {
    throw std::invalid_argument("noise spec: sigma_floor and amplitude_floor must be positive");
  }
}

double noise_sample(double a_fit, const SystemConfig& config, const CoefficientSurfaces& surfaces) {
  return a_fit - eval_f(config, surfaces);
}

double noise_sigma(const SystemConfig& config, const NoiseSpec& spec) {
  return std::max(eval_L(config, spec.surfaces).sigma, spec.sigma_floor);
}

NoiseSampleSet sample_noise(const SystemConfig& config, const NoiseSpec& spec,
                            std::uint64_t rng_seed, std::size_t count) {
  spec.validate();
  if (count < 1) {
    throw std::invalid_argument("sample_noise: count must be at least 1");
  }
  const double sigma = noise_sigma(config, spec);
  std::mt19937_64 rng(rng_seed);
  NoiseSampleSet set;
  set.config = config;
  set.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    set.samples.push_back(draw(spec.distribution, sigma, rng));
  }
  return set;
}

NoiseStats noise_stats(const NoiseSampleSet& samples) {
  const auto& xs = samples.samples;
  if (xs.size() < 2) {
    throw std::invalid_argument("noise_stats: need at least two samples, got " +
                                std::to_string(xs.size()));
  }
  const auto n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (const double x : xs) {
    mean += x;
  }
  mean /= n;
  double ss = 0.0;
  for (const double x : xs) {
    ss += (x - mean) * (x - mean);
  }
  return {mean, std::sqrt(ss / (n - 1.0))};
}

SimulatedTrace simulate_trace(const SystemConfig& config, const NoiseSpec& spec,
                              std::span<const double> times, std::uint64_t rng_seed, int trial_id,
                              const EvaluationOptions& opts) {
  spec.validate();
  config.validate();

  SimulatedTrace out;
  out.trace.config = config;
  out.trace.trial_id = trial_id;
  out.trace.times.assign(times.begin(), times.end());
  out.trace.values.assign(times.size(), 0.0);
  out.trace.validate();
  for (const double t : times) {
    if (!(t >= opts.t_min)) {
      throw std::invalid_argument("generate_noisy_trace: time " + std::to_string(t) +
                                  " is below t_min");
    }
  }

  std::mt19937_64 rng(rng_seed);
  out.noise = draw(spec.distribution, noise_sigma(config, spec), rng);
  out.amplitude = eval_f(config, spec.surfaces) + out.noise;
  if (out.amplitude < spec.amplitude_floor) {
    out.amplitude = spec.amplitude_floor;
    out.amplitude_clamped = true;
  }

  const ChannelCoefficients coeffs{out.amplitude, spec.surfaces.b_star, eval_g(config, spec.surfaces)};
  for (std::size_t k = 0; k < times.size(); ++k) {
    out.trace.values[k] = eval_impulse_response(times[k], coeffs, config.distance, opts);
  }
  return out;
}

Trace generate_noisy_trace(const SystemConfig& config, const NoiseSpec& spec,
                           std::span<const double> times, std::uint64_t rng_seed, int trial_id,
                           const EvaluationOptions& opts) {
  return simulate_trace(config, spec, times, rng_seed, trial_id, opts).trace;
}

} // namespace molchan
