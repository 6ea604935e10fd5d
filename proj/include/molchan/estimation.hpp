#ifndef MOLCHAN_ESTIMATION_HPP
#define MOLCHAN_ESTIMATION_HPP

// Coefficient estimation for the channel model.
//
// Per-trace fits minimise the plain sum of squared residuals between the
// observed trace and a * bracket^-0.65 with a damped Gauss-Newton
// (Levenberg-Marquardt) iteration. The calibration pipeline then pins the
// diffusion coefficient to the mean of the free fits, refits (a, c), groups
// the refits per configuration and regresses the linear surfaces f, g, L.

#include "molchan/model.hpp"
#include "molchan/trace.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace molchan {

struct FitOptions {
  std::optional<ChannelCoefficients> initial_guess;
  int max_iterations = 200;
  double relative_sse_tolerance = 1e-8;
  double damping_init = 1e-3;
  // Samples before this time are ignored; the effective start is never
  // earlier than eval.t_min.
  double fit_window_start = 0.1;
  EvaluationOptions eval;

  void validate() const;
};

struct FitResult {
  ChannelCoefficients coefficients;
  double rmse = 0.0;
  double sse = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t sample_count = 0;
};

/// Raised when the objective stops being finite. Carries the last finite
/// iterate.
class FitDivergenceError : public std::runtime_error {
 public:
  FitDivergenceError(const std::string& what, FitResult last)
      : std::runtime_error(what), last_(last) {}
  const FitResult& last_iterate() const { return last_; }

 private:
  FitResult last_;
};

FitResult fit_channel(const Trace& trace, const FitOptions& options = {});

/// Fit of (a, c) with the diffusion coefficient held at b_star.
FitResult fit_channel_fixed_b(const Trace& trace, double b_star, const FitOptions& options = {});

double rmse(std::span<const double> observed, std::span<const double> predicted);
double rmse(const Trace& trace, std::span<const double> predicted);

double compute_b_star(std::span<const FitResult> fits);

struct CoefficientRow {
  SystemConfig config;
  double mean_a = 0.0;
  double std_a = 0.0;
  double mean_c = 0.0;
  double std_c = 0.0;
  int trial_count = 0;
};

/// Rows sorted lexicographically by (distance, spray duration, voltage).
struct CoefficientTable {
  std::vector<CoefficientRow> rows;
};

CoefficientTable aggregate_coefficients(
    std::span<const std::pair<SystemConfig, FitResult>> fits);

/// Solves min ||X beta - y|| by column-pivoted QR. Throws
/// std::invalid_argument when X lacks full column rank.
Eigen::VectorXd ordinary_least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                       const std::string& label = "design");

/// Regresses f and L on [d, s, v, 1] and g on [d, v, 1]. b_star is left 0.
CoefficientSurfaces fit_linear_surfaces(const CoefficientTable& table);

struct SurfaceDiagnostics {
  double f_rmse = 0.0;
  double g_rmse = 0.0;
  double L_rmse = 0.0;
};

/// Regression residual RMSE of each surface against the table targets.
SurfaceDiagnostics surface_residuals(const CoefficientTable& table,
                                     const CoefficientSurfaces& surfaces);

struct TraceFit {
  std::size_t trace_index = 0;
  int trial_id = 0;
  SystemConfig config;
  FitResult fit;
};

struct CalibrationResult {
  CoefficientSurfaces surfaces;
  CoefficientTable table;
  std::vector<TraceFit> free_fits;      // stage 1
  std::vector<TraceFit> per_trace_fits; // stage 3, b fixed at b_star
  SurfaceDiagnostics diagnostics;
};

class CalibrationError : public std::runtime_error {
 public:
  CalibrationError(std::string stage, std::optional<std::size_t> trace_index,
                   const std::string& detail);
  const std::string& stage() const { return stage_; }
  std::optional<std::size_t> trace_index() const { return trace_index_; }

 private:
  std::string stage_;
  std::optional<std::size_t> trace_index_;
};

/// Full pipeline. Fits inside a stage may run on up to `threads` workers
/// (0 = hardware concurrency); results do not depend on the thread count.
CalibrationResult calibrate(std::span<const Trace> dataset, const FitOptions& options = {},
                            unsigned threads = 1);

/// Surface-model response at each time. Logs a warning for configurations
/// outside the calibrated hull. Throws std::invalid_argument for t < t_min.
std::vector<double> predict_trace(const SystemConfig& config, const CoefficientSurfaces& surfaces,
                                  std::span<const double> times,
                                  const EvaluationOptions& opts = {});

} // namespace molchan

#endif
