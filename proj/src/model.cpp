#include "molchan/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace molchan {

void SystemConfig::validate() const {
  if (!(distance > 0.0) || !(spray_duration > 0.0) || !(initial_voltage > 0.0)) {
    throw std::domain_error("system config: distance, spray duration and initial voltage must be positive");
  }
}

bool SystemConfig::in_calibrated_hull() const {
  return distance >= 2.0 && distance <= 5.0 && spray_duration >= 50.0 &&
         spray_duration <= 200.0 && initial_voltage >= 1.0 && initial_voltage <= 1.9;
}

void ChannelCoefficients::validate() const {
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(c) || !std::isfinite(a) || !std::isfinite(b)) {
    throw std::domain_error("channel coefficients: need a > 0, b > 0 and finite c");
  }
}

double eval_bracket(double t, double d, double b, double c) {
  if (!(t > 0.0) || !(d > 0.0) || !(b > 0.0)) {
    throw std::domain_error("eval_bracket: t, d and b must be positive");
  }
  const double drift = d - c * t;
  return d / std::sqrt(4.0 * std::numbers::pi * b * t * t * t) *
         std::exp(-drift * drift / (4.0 * b * t));
}

double eval_impulse_response(double t, const ChannelCoefficients& coeffs, double d,
                             const EvaluationOptions& opts) {
  if (!(t >= opts.t_min)) {
    throw std::domain_error("eval_impulse_response: t = " + std::to_string(t) +
                            " is below t_min = " + std::to_string(opts.t_min));
  }
  const double bracket = eval_bracket(t, d, coeffs.b, coeffs.c);
  if (bracket < opts.underflow_floor) {
    return opts.response_cap;
  }
  return std::min(coeffs.a * std::pow(bracket, kSensorExponent), opts.response_cap);
}

double eval_f(const SystemConfig& config, const CoefficientSurfaces& surfaces) {
  const auto& f = surfaces.f;
  return f.d * config.distance + f.s * config.spray_duration + f.v * config.initial_voltage +
         f.intercept;
}

double eval_g(const SystemConfig& config, const CoefficientSurfaces& surfaces) {
  const auto& g = surfaces.g;
  return g.d * config.distance + g.v * config.initial_voltage + g.intercept;
}

SigmaValue eval_L(const SystemConfig& config, const CoefficientSurfaces& surfaces) {
  const auto& L = surfaces.L;
  const double raw = L.d * config.distance + L.s * config.spray_duration +
                     L.v * config.initial_voltage + L.intercept;
  if (raw < kSigmaFloor) {
    return {kSigmaFloor, true};
  }
  return {raw, false};
}

ChannelCoefficients surface_coefficients(const SystemConfig& config,
                                         const CoefficientSurfaces& surfaces) {
  return {eval_f(config, surfaces), surfaces.b_star, eval_g(config, surfaces)};
}

double eval_universal_response(double t, const SystemConfig& config,
                               const CoefficientSurfaces& surfaces,
                               const EvaluationOptions& opts) {
  return eval_impulse_response(t, surface_coefficients(config, surfaces), config.distance, opts);
}

double eval_legacy_response(double t, double a, double b, double c, double d) {
  if (!(t > 0.0)) {
    throw std::domain_error("eval_legacy_response: t must be positive");
  }
  if (!(b > 0.0)) {
    throw std::domain_error("eval_legacy_response: b must be positive");
  }
  const double drift = d - c * t;
  return a / std::sqrt(t * t * t) * std::exp(-b * drift * drift / t);
}

double eval_concentration(double t, const ConcentrationParams& params) {
  if (!(t > 0.0)) {
    throw std::domain_error("eval_concentration: t must be positive");
  }
  if (!(params.molecule_count > 0.0) || !(params.diffusion > 0.0) || !(params.distance > 0.0)) {
    throw std::domain_error("eval_concentration: molecule count, diffusion and distance must be positive");
  }
  return params.molecule_count *
         eval_bracket(t, params.distance, params.diffusion, params.velocity);
}

double resistance_from_concentration(double concentration, const SensorParams& params) {
  if (!(concentration > 0.0)) {
    throw std::domain_error("resistance_from_concentration: concentration must be positive");
  }
  if (!(params.scale > 0.0) || !(params.reference_resistance > 0.0)) {
    throw std::domain_error("resistance_from_concentration: scale and R0 must be positive");
  }
  return params.scale * std::pow(concentration, params.exponent);
}

double estimate_power_law_exponent(std::span<const std::pair<double, double>> points) {
  if (points.size() < 2) {
    throw std::domain_error("estimate_power_law_exponent: need at least two points");
  }
  double mean_x = 0.0;
  double mean_y = 0.0;
  for (const auto& [conc, ratio] : points) {
    if (!(conc > 0.0) || !(ratio > 0.0)) {
      throw std::domain_error("estimate_power_law_exponent: coordinates must be positive");
    }
    mean_x += std::log(conc);
    mean_y += std::log(ratio);
  }
  const auto n = static_cast<double>(points.size());
  mean_x /= n;
  mean_y /= n;

  double sxy = 0.0;
  double sxx = 0.0;
  for (const auto& [conc, ratio] : points) {
    const double dx = std::log(conc) - mean_x;
    sxy += dx * (std::log(ratio) - mean_y);
    sxx += dx * dx;
  }
  if (sxx == 0.0) {
    throw std::domain_error("estimate_power_law_exponent: all concentrations are equal");
  }
  return sxy / sxx;
}

double peak_time(double b, double c, double d) {
  if (!(b > 0.0) || !(d > 0.0)) {
    throw std::domain_error("peak_time: b and d must be positive");
  }
  // Root of c^2 t^2 + 6 b t - d^2 = 0, rationalized so c = 0 needs no branch.
  return d * d / (3.0 * b + std::sqrt(9.0 * b * b + c * c * d * d));
}

} // namespace molchan
