#ifndef MOLCHAN_MODEL_HPP
#define MOLCHAN_MODEL_HPP

// Analytical channel model for a sprayed-chemical link read out by a
// metal-oxide sensor: advection-diffusion propagation followed by the
// sensor power law, plus the linear coefficient surfaces that map the
// experiment knobs (distance, spray duration, initial voltage) onto the
// response coefficients.
//
// Units throughout: distance in meters, spray duration in milliseconds,
// initial voltage in volts, time in seconds. Time zero is spray onset.
//
// Every function here is pure and safe to call concurrently.

#include <span>
#include <utility>

namespace molchan {

/// Power-law exponent of the sensor resistance vs. concentration law.
inline constexpr double kSensorExponent = -0.65;

/// Floor applied to the noise standard-deviation surface.
inline constexpr double kSigmaFloor = 1e-6;

struct SystemConfig {
  double distance = 0.0;        // m
  double spray_duration = 0.0;  // ms
  double initial_voltage = 0.0; // V

  /// Throws std::domain_error unless all three knobs are positive.
  void validate() const;

  /// True inside the calibrated box: d in [2,5], s in [50,200], v in [1.0,1.9].
  bool in_calibrated_hull() const;

  friend bool operator==(const SystemConfig&, const SystemConfig&) = default;
  friend auto operator<=>(const SystemConfig&, const SystemConfig&) = default;
};

struct ChannelCoefficients {
  double a = 0.0; // amplitude, observation units
  double b = 0.0; // effective diffusion
  double c = 0.0; // effective velocity

  /// a > 0, b > 0, c finite.
  void validate() const;

  friend bool operator==(const ChannelCoefficients&, const ChannelCoefficients&) = default;
};

struct ConcentrationParams {
  double molecule_count = 1.0;
  double diffusion = 0.0;
  double velocity = 0.0;
  double distance = 0.0;
};

struct SensorParams {
  double scale = 1.0;
  double exponent = kSensorExponent;
  double reference_resistance = 1.0;

  /// Constant of the normalized law R/R0 = scale_ratio * C^n.
  double scale_ratio() const { return scale / reference_resistance; }
};

struct SurfaceBetas3 {
  double d = 0.0;
  double s = 0.0;
  double v = 0.0;
  double intercept = 0.0;
  friend bool operator==(const SurfaceBetas3&, const SurfaceBetas3&) = default;
};

struct SurfaceBetas2 {
  double d = 0.0;
  double v = 0.0;
  double intercept = 0.0;
  friend bool operator==(const SurfaceBetas2&, const SurfaceBetas2&) = default;
};

/// Linear coefficient surfaces a = f(d,s,v), c = g(d,v), sigma = L(d,s,v),
/// together with the shared diffusion coefficient b*.
struct CoefficientSurfaces {
  SurfaceBetas3 f;
  SurfaceBetas2 g;
  SurfaceBetas3 L;
  double b_star = 0.0;

  friend bool operator==(const CoefficientSurfaces&, const CoefficientSurfaces&) = default;
};

/// Surfaces estimated from the 640-trial tabletop campaign.
inline constexpr CoefficientSurfaces kPaperSurfaces{
    .f = {-0.4188, 0.0098, -1.7873, 4.6469},
    .g = {0.0709, 0.1362, -0.0427},
    .L = {-0.1258, 0.0014, -0.2403, 0.9738},
    .b_star = 0.1950,
};

struct EvaluationOptions {
  double t_min = 0.1;
  double response_cap = 1e6;
  double underflow_floor = 1e-30;
};

struct SigmaValue {
  double sigma = kSigmaFloor;
  bool clamped = false;
};

/// d / sqrt(4 pi b t^3) * exp(-(d - c t)^2 / (4 b t)).
double eval_bracket(double t, double d, double b, double c);

/// a * bracket^-0.65, clamped to opts.response_cap. Throws std::domain_error
/// for t < opts.t_min.
double eval_impulse_response(double t, const ChannelCoefficients& coeffs, double d,
                             const EvaluationOptions& opts = {});

double eval_f(const SystemConfig& config, const CoefficientSurfaces& surfaces);
double eval_g(const SystemConfig& config, const CoefficientSurfaces& surfaces);
SigmaValue eval_L(const SystemConfig& config, const CoefficientSurfaces& surfaces);

/// Coefficients implied by the surfaces at a configuration: (f, b*, g).
ChannelCoefficients surface_coefficients(const SystemConfig& config,
                                         const CoefficientSurfaces& surfaces);

double eval_universal_response(double t, const SystemConfig& config,
                               const CoefficientSurfaces& surfaces,
                               const EvaluationOptions& opts = {});

/// Earlier propagation-only model with ad-hoc correction factors,
/// (a / sqrt(t^3)) * exp(-b (d - c t)^2 / t). Kept for comparison fits.
double eval_legacy_response(double t, double a, double b, double c, double d);

double eval_concentration(double t, const ConcentrationParams& params);

/// Sensor resistance a1 * C^n. Throws std::domain_error for C <= 0.
double resistance_from_concentration(double concentration, const SensorParams& params);

/// Least-squares slope of log(ratio) against log(concentration).
double estimate_power_law_exponent(std::span<const std::pair<double, double>> points);

/// Time at which the bracket peaks (the response has its minimum there).
double peak_time(double b, double c, double d);

} // namespace molchan

#endif
