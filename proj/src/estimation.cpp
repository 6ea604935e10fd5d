#include "molchan/estimation.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

namespace molchan {

namespace {

constexpr double kLambdaMax = 1e16;
constexpr std::size_t kMinFitSamples = 8;
constexpr double kDefaultDiffusionGuess = 0.2;

// Fit parameterization: (log a, log b, c) for free fits, (log a, c) with b
// pinned. Positivity of a and b is structural.
class FitProblem {
 public:
  FitProblem(const Trace& trace, std::optional<double> fixed_b, const FitOptions& options)
      : distance_(trace.config.distance), fixed_b_(fixed_b), eval_(options.eval) {
    const double start = std::max(options.fit_window_start, options.eval.t_min);
    for (std::size_t k = 0; k < trace.size(); ++k) {
      if (trace.times[k] >= start) {
        times_.push_back(trace.times[k]);
        observed_.push_back(trace.values[k]);
      }
    }
  }

  std::size_t size() const { return times_.size(); }
  Eigen::Index dimension() const { return fixed_b_ ? 2 : 3; }
  std::span<const double> times() const { return times_; }
  std::span<const double> observed() const { return observed_; }
  double distance() const { return distance_; }
  const EvaluationOptions& eval() const { return eval_; }
  std::optional<double> fixed_b() const { return fixed_b_; }

  ChannelCoefficients unpack(const Eigen::VectorXd& p) const {
    if (fixed_b_) {
      return {std::exp(p[0]), *fixed_b_, p[1]};
    }
    return {std::exp(p[0]), std::exp(p[1]), p[2]};
  }

  Eigen::VectorXd pack(const ChannelCoefficients& coeffs) const {
    Eigen::VectorXd p(dimension());
    if (fixed_b_) {
      p << std::log(coeffs.a), coeffs.c;
    } else {
      p << std::log(coeffs.a), std::log(coeffs.b), coeffs.c;
    }
    return p;
  }

  // Model values at the window samples; false if the parameters leave the
  // domain (a or b not a positive finite number).
  bool predict(const Eigen::VectorXd& p, Eigen::VectorXd& out) const {
    const ChannelCoefficients coeffs = unpack(p);
    if (!(coeffs.a > 0.0) || !std::isfinite(coeffs.a) || !(coeffs.b > 0.0) ||
        !std::isfinite(coeffs.b) || !std::isfinite(coeffs.c)) {
      return false;
    }
    out.resize(static_cast<Eigen::Index>(times_.size()));
    for (std::size_t k = 0; k < times_.size(); ++k) {
      out[static_cast<Eigen::Index>(k)] = eval_impulse_response(times_[k], coeffs, distance_, eval_);
    }
    return out.allFinite();
  }

  double sse(const Eigen::VectorXd& p, Eigen::VectorXd& residual) const {
    Eigen::VectorXd model;
    if (!predict(p, model)) {
      return std::numeric_limits<double>::infinity();
    }
    residual = observed_vector() - model;
    return residual.squaredNorm();
  }

  Eigen::VectorXd observed_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(observed_.data(),
                                             static_cast<Eigen::Index>(observed_.size()));
  }

 private:
  std::vector<double> times_;
  std::vector<double> observed_;
  double distance_;
  std::optional<double> fixed_b_;
  EvaluationOptions eval_;
};

// Forward-difference Jacobian of the model values, falling back to a
// backward difference when the forward point leaves the domain.
Eigen::MatrixXd jacobian(const FitProblem& problem, const Eigen::VectorXd& p,
                         const Eigen::VectorXd& model_at_p) {
  Eigen::MatrixXd jac(model_at_p.size(), p.size());
  Eigen::VectorXd shifted_model;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double step = std::max(1e-6, 1e-6 * std::abs(p[i]));
    Eigen::VectorXd shifted = p;
    shifted[i] += step;
    if (problem.predict(shifted, shifted_model)) {
      jac.col(i) = (shifted_model - model_at_p) / step;
      continue;
    }
    shifted[i] = p[i] - step;
    if (problem.predict(shifted, shifted_model)) {
      jac.col(i) = (model_at_p - shifted_model) / step;
    } else {
      jac.col(i).setZero();
    }
  }
  return jac;
}

// In log space the model is linear in (1, 1/t, t) once the fixed
// 1.5 * 0.65 log t term is moved across:
//   log h = alpha - 1.5 n log t - n d^2/(4b) / t - n c^2/(4b) t
// Regressing the positive, uncapped samples gives a starting point that is
// exact for noise-free traces. Returns nullopt when the data do not allow it.
std::optional<ChannelCoefficients> log_linear_guess(const FitProblem& problem) {
  const double n = kSensorExponent;
  const double d = problem.distance();
  const double cap_guard = problem.eval().response_cap * (1.0 - 1e-9);

  std::vector<double> ts;
  std::vector<double> ys;
  for (std::size_t k = 0; k < problem.size(); ++k) {
    const double t = problem.times()[k];
    const double o = problem.observed()[k];
    if (o > 0.0 && o < cap_guard) {
      ts.push_back(t);
      ys.push_back(std::log(o) + 1.5 * n * std::log(t));
    }
  }
  const auto rows = static_cast<Eigen::Index>(ts.size());

  double b = 0.0;
  double alpha = 0.0;
  double delta = 0.0;
  if (auto fixed = problem.fixed_b()) {
    if (rows < 2) {
      return std::nullopt;
    }
    b = *fixed;
    const double gamma = -n * d * d / (4.0 * b);
    Eigen::MatrixXd x(rows, 2);
    Eigen::VectorXd y(rows);
    for (Eigen::Index k = 0; k < rows; ++k) {
      x(k, 0) = 1.0;
      x(k, 1) = ts[static_cast<std::size_t>(k)];
      y[k] = ys[static_cast<std::size_t>(k)] - gamma / ts[static_cast<std::size_t>(k)];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < 2) {
      return std::nullopt;
    }
    const Eigen::VectorXd beta = qr.solve(y);
    alpha = beta[0];
    delta = beta[1];
  } else {
    if (rows < 3) {
      return std::nullopt;
    }
    Eigen::MatrixXd x(rows, 3);
    Eigen::VectorXd y(rows);
    for (Eigen::Index k = 0; k < rows; ++k) {
      const double t = ts[static_cast<std::size_t>(k)];
      x(k, 0) = 1.0;
      x(k, 1) = 1.0 / t;
      x(k, 2) = t;
      y[k] = ys[static_cast<std::size_t>(k)];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < 3) {
      return std::nullopt;
    }
    const Eigen::VectorXd beta = qr.solve(y);
    const double gamma = beta[1];
    if (!(gamma > 0.0)) {
      return std::nullopt;
    }
    alpha = beta[0];
    delta = beta[2];
    b = -n * d * d / (4.0 * gamma);
  }

  const double c = std::sqrt(std::max(delta, 0.0) * 4.0 * b / -n);
  const double log_a =
      alpha - n * (std::log(d) - 0.5 * std::log(4.0 * std::numbers::pi * b) + d * c / (2.0 * b));
  const ChannelCoefficients guess{std::exp(log_a), b, c};
  if (!(guess.a > 0.0) || !std::isfinite(guess.a) || !(guess.b > 0.0) ||
      !std::isfinite(guess.b) || !std::isfinite(guess.c)) {
    return std::nullopt;
  }
  return guess;
}

// Fallback: anchor on the extremum (dip) sample.
ChannelCoefficients extremum_guess(const FitProblem& problem) {
  const auto obs = problem.observed();
  const auto it = std::min_element(obs.begin(), obs.end());
  const auto k = static_cast<std::size_t>(it - obs.begin());
  const double t_e = problem.times()[k];
  const double d = problem.distance();
  const double b0 = problem.fixed_b().value_or(kDefaultDiffusionGuess);
  const double c0 = d / t_e;
  const double level = *it > 0.0 ? *it : std::max(std::abs(*it), 1e-3);
  const double bracket = eval_bracket(t_e, d, b0, c0);
  double a0 = level * std::pow(bracket, -kSensorExponent);
  if (!(a0 > 0.0) || !std::isfinite(a0)) {
    a0 = 1.0;
  }
  return {a0, b0, c0};
}

// h(a, b, c) and h(a * exp(n d c / b), b, -c) coincide, so the sign of c is
// not identifiable from a trace. Report the c >= 0 representative.
ChannelCoefficients canonical_sign(ChannelCoefficients coeffs, double distance) {
  if (coeffs.c < 0.0) {
    coeffs.a *= std::exp(kSensorExponent * distance * coeffs.c / coeffs.b);
    coeffs.c = -coeffs.c;
  }
  return coeffs;
}

FitResult run_fit(const Trace& trace, std::optional<double> fixed_b, const FitOptions& options) {
  options.validate();
  trace.validate();
  trace.config.validate();

  const FitProblem problem(trace, fixed_b, options);
  if (problem.size() < kMinFitSamples) {
    throw std::invalid_argument("fit: trace has " + std::to_string(problem.size()) +
                                " samples in the fit window, need at least " +
                                std::to_string(kMinFitSamples));
  }

  ChannelCoefficients start;
  if (options.initial_guess) {
    start = *options.initial_guess;
    if (fixed_b) {
      start.b = *fixed_b;
    }
    start.validate();
  } else {
    start = log_linear_guess(problem).value_or(extremum_guess(problem));
  }

  Eigen::VectorXd p = problem.pack(start);
  Eigen::VectorXd residual;
  double sse = problem.sse(p, residual);

  FitResult result;
  result.sample_count = problem.size();
  auto snapshot = [&](const Eigen::VectorXd& params, double value) {
    result.coefficients = problem.unpack(params);
    result.sse = value;
    result.rmse = std::sqrt(value / static_cast<double>(problem.size()));
  };

  if (!std::isfinite(sse)) {
    snapshot(p, sse);
    throw FitDivergenceError("fit: objective is not finite at the initial guess", result);
  }
  snapshot(p, sse);

  double lambda = options.damping_init;
  bool converged = sse == 0.0;
  int iterations = 0;
  Eigen::VectorXd model;
  Eigen::VectorXd trial_residual;

  while (!converged && iterations < options.max_iterations) {
    ++iterations;
    problem.predict(p, model);
    const Eigen::MatrixXd jac = jacobian(problem, p, model);
    const Eigen::MatrixXd normal = jac.transpose() * jac;
    const Eigen::VectorXd gradient = jac.transpose() * residual;

    bool accepted = false;
    bool all_non_finite = true;
    while (!accepted) {
      Eigen::MatrixXd damped = normal;
      for (Eigen::Index i = 0; i < damped.rows(); ++i) {
        const double diag = normal(i, i);
        damped(i, i) += lambda * (diag > 0.0 ? diag : 1.0);
      }
      const Eigen::VectorXd step = damped.ldlt().solve(gradient);
      const Eigen::VectorXd candidate = p + step;
      const double trial_sse = step.allFinite() ? problem.sse(candidate, trial_residual)
                                                : std::numeric_limits<double>::infinity();
      if (std::isfinite(trial_sse)) {
        all_non_finite = false;
      }

      // Strict decrease only: on ties the earlier iterate is kept.
      if (std::isfinite(trial_sse) && trial_sse < sse) {
        const double predicted = (residual.squaredNorm() - (residual - jac * step).squaredNorm());
        const double actual_rel = (sse - trial_sse) / sse;
        const double predicted_rel = std::abs(predicted) / sse;
        const bool tiny_step =
            step.norm() <= 1e-14 * (p.norm() + 1e-14);
        p = candidate;
        residual = trial_residual;
        sse = trial_sse;
        snapshot(p, sse);
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        if (sse == 0.0 || tiny_step ||
            (actual_rel < options.relative_sse_tolerance &&
             predicted_rel < options.relative_sse_tolerance)) {
          converged = true;
        }
      } else {
        lambda *= 10.0;
        if (lambda > kLambdaMax) {
          if (all_non_finite) {
            result.iterations = iterations;
            throw FitDivergenceError("fit: objective is non-finite around the current iterate",
                                     result);
          }
          // No damped step decreases the objective: stationary to working
          // precision.
          converged = true;
          break;
        }
      }
    }
  }

  result.iterations = iterations;
  result.converged = converged;

  const ChannelCoefficients canonical = canonical_sign(result.coefficients, problem.distance());
  if (!(canonical == result.coefficients)) {
    Eigen::VectorXd canonical_residual;
    const Eigen::VectorXd q = problem.pack(canonical);
    const double canonical_sse = problem.sse(q, canonical_residual);
    if (std::isfinite(canonical_sse)) {
      result.coefficients = canonical;
      result.sse = canonical_sse;
      result.rmse = std::sqrt(canonical_sse / static_cast<double>(problem.size()));
    }
  }
  if (fixed_b) {
    result.coefficients.b = *fixed_b;
  }
  return result;
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads == 0) {
    threads = std::max(1u, std::thread::hardware_concurrency());
  }
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  for (unsigned w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += threads) {
        fn(i);
      }
    });
  }
}

std::string describe(const Trace& trace, std::size_t index) {
  std::ostringstream out;
  out << "trace #" << index << " (d=" << trace.config.distance
      << " m, s=" << trace.config.spray_duration << " ms, v=" << trace.config.initial_voltage
      << " V, trial " << trace.trial_id << ")";
  return out.str();
}

// Runs one fit per trace; the first failure in trace order is rethrown as a
// CalibrationError for that stage.
std::vector<TraceFit> fit_all(std::span<const Trace> dataset, const std::string& stage,
                              unsigned threads, const std::function<FitResult(const Trace&)>& fit) {
  std::vector<TraceFit> fits(dataset.size());
  std::vector<std::exception_ptr> errors(dataset.size());
  parallel_for(dataset.size(), threads, [&](std::size_t i) {
    try {
      fits[i] = {i, dataset[i].trial_id, dataset[i].config, fit(dataset[i])};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const std::exception& e) {
        throw CalibrationError(stage, i, describe(dataset[i], i) + ": " + e.what());
      }
    }
    if (!fits[i].fit.converged) {
      spdlog::warn("{}: {} did not converge after {} iterations", stage, describe(dataset[i], i),
                   fits[i].fit.iterations);
    }
  }
  return fits;
}

} // namespace

void FitOptions::validate() const {
  if (max_iterations < 1) {
    throw std::invalid_argument("fit options: max_iterations must be at least 1");
  }
  if (!(relative_sse_tolerance > 0.0) || !(damping_init > 0.0)) {
    throw std::invalid_argument("fit options: tolerance and initial damping must be positive");
  }
  if (!(eval.t_min > 0.0) || !(eval.response_cap > 0.0)) {
    throw std::invalid_argument("fit options: t_min and response_cap must be positive");
  }
}

FitResult fit_channel(const Trace& trace, const FitOptions& options) {
  return run_fit(trace, std::nullopt, options);
}

FitResult fit_channel_fixed_b(const Trace& trace, double b_star, const FitOptions& options) {
  if (!(b_star > 0.0) || !std::isfinite(b_star)) {
    throw std::invalid_argument("fit_channel_fixed_b: b_star must be positive");
  }
  return run_fit(trace, b_star, options);
}

double rmse(std::span<const double> observed, std::span<const double> predicted) {
  if (observed.size() != predicted.size()) {
    throw std::invalid_argument("rmse: length mismatch (" + std::to_string(observed.size()) +
                                " vs " + std::to_string(predicted.size()) + ")");
  }
  if (observed.empty()) {
    throw std::invalid_argument("rmse: empty input");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    const double r = observed[k] - predicted[k];
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(observed.size()));
}

double rmse(const Trace& trace, std::span<const double> predicted) {
  return rmse(std::span<const double>(trace.values), predicted);
}

double compute_b_star(std::span<const FitResult> fits) {
  if (fits.empty()) {
    throw std::invalid_argument("compute_b_star: no fits");
  }
  double sum = 0.0;
  for (const auto& fit : fits) {
    sum += fit.coefficients.b;
  }
  return sum / static_cast<double>(fits.size());
}

CoefficientTable aggregate_coefficients(
    std::span<const std::pair<SystemConfig, FitResult>> fits) {
  if (fits.empty()) {
    throw std::invalid_argument("aggregate_coefficients: no fits");
  }
  std::map<SystemConfig, std::vector<const ChannelCoefficients*>> groups;
  for (const auto& [config, fit] : fits) {
    groups[config].push_back(&fit.coefficients);
  }

  CoefficientTable table;
  table.rows.reserve(groups.size());
  for (const auto& [config, members] : groups) {
    const auto n = static_cast<double>(members.size());
    CoefficientRow row;
    row.config = config;
    row.trial_count = static_cast<int>(members.size());
    for (const auto* c : members) {
      row.mean_a += c->a;
      row.mean_c += c->c;
    }
    row.mean_a /= n;
    row.mean_c /= n;
    if (members.size() > 1) {
      for (const auto* c : members) {
        row.std_a += (c->a - row.mean_a) * (c->a - row.mean_a);
        row.std_c += (c->c - row.mean_c) * (c->c - row.mean_c);
      }
      row.std_a = std::sqrt(row.std_a / (n - 1.0));
      row.std_c = std::sqrt(row.std_c / (n - 1.0));
    }
    table.rows.push_back(row);
  }
  return table;
}

Eigen::VectorXd ordinary_least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                       const std::string& label) {
  if (design.rows() != targets.size()) {
    throw std::invalid_argument(label + ": design has " + std::to_string(design.rows()) +
                                " rows but " + std::to_string(targets.size()) + " targets");
  }
  if (design.rows() < design.cols()) {
    throw std::invalid_argument(label + ": need at least " + std::to_string(design.cols()) +
                                " observations, got " + std::to_string(design.rows()));
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < design.cols()) {
    throw std::invalid_argument(label + ": design matrix is rank deficient (rank " +
                                std::to_string(qr.rank()) + " of " +
                                std::to_string(design.cols()) + ")");
  }
  return qr.solve(targets);
}

CoefficientSurfaces fit_linear_surfaces(const CoefficientTable& table) {
  const auto rows = static_cast<Eigen::Index>(table.rows.size());
  Eigen::MatrixXd full(rows, 4);
  Eigen::MatrixXd reduced(rows, 3);
  Eigen::VectorXd mean_a(rows);
  Eigen::VectorXd std_a(rows);
  Eigen::VectorXd mean_c(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    full.row(i) << row.config.distance, row.config.spray_duration, row.config.initial_voltage, 1.0;
    reduced.row(i) << row.config.distance, row.config.initial_voltage, 1.0;
    mean_a[i] = row.mean_a;
    std_a[i] = row.std_a;
    mean_c[i] = row.mean_c;
  }

  const Eigen::VectorXd f = ordinary_least_squares(full, mean_a, "surface f");
  const Eigen::VectorXd g = ordinary_least_squares(reduced, mean_c, "surface g");
  const Eigen::VectorXd L = ordinary_least_squares(full, std_a, "surface L");

  CoefficientSurfaces surfaces;
  surfaces.f = {f[0], f[1], f[2], f[3]};
  surfaces.g = {g[0], g[1], g[2]};
  surfaces.L = {L[0], L[1], L[2], L[3]};
  return surfaces;
}

SurfaceDiagnostics surface_residuals(const CoefficientTable& table,
                                     const CoefficientSurfaces& surfaces) {
  if (table.rows.empty()) {
    return {};
  }
  double f_sum = 0.0;
  double g_sum = 0.0;
  double L_sum = 0.0;
  for (const auto& row : table.rows) {
    const auto& c = row.config;
    const double f = eval_f(c, surfaces) - row.mean_a;
    const double g = eval_g(c, surfaces) - row.mean_c;
    const double L = surfaces.L.d * c.distance + surfaces.L.s * c.spray_duration +
                     surfaces.L.v * c.initial_voltage + surfaces.L.intercept - row.std_a;
    f_sum += f * f;
    g_sum += g * g;
    L_sum += L * L;
  }
  const auto n = static_cast<double>(table.rows.size());
  return {std::sqrt(f_sum / n), std::sqrt(g_sum / n), std::sqrt(L_sum / n)};
}

CalibrationError::CalibrationError(std::string stage, std::optional<std::size_t> trace_index,
                                   const std::string& detail)
    : std::runtime_error("calibration stage '" + stage + "' failed: " + detail),
      stage_(std::move(stage)),
      trace_index_(trace_index) {}

CalibrationResult calibrate(std::span<const Trace> dataset, const FitOptions& options,
                            unsigned threads) {
  if (dataset.empty()) {
    throw CalibrationError("input", std::nullopt, "dataset is empty");
  }

  CalibrationResult result;
  result.free_fits = fit_all(dataset, "free fit", threads,
                             [&](const Trace& t) { return fit_channel(t, options); });

  std::vector<FitResult> free_results;
  free_results.reserve(result.free_fits.size());
  for (const auto& tf : result.free_fits) {
    free_results.push_back(tf.fit);
  }
  const double b_star = compute_b_star(free_results);

  result.per_trace_fits =
      fit_all(dataset, "fixed-b refit", threads,
              [&](const Trace& t) { return fit_channel_fixed_b(t, b_star, options); });

  std::vector<std::pair<SystemConfig, FitResult>> grouped;
  grouped.reserve(result.per_trace_fits.size());
  for (const auto& tf : result.per_trace_fits) {
    grouped.emplace_back(tf.config, tf.fit);
  }
  result.table = aggregate_coefficients(grouped);

  try {
    result.surfaces = fit_linear_surfaces(result.table);
  } catch (const std::exception& e) {
    throw CalibrationError("surface regression", std::nullopt, e.what());
  }
  result.surfaces.b_star = b_star;
  result.diagnostics = surface_residuals(result.table, result.surfaces);
  return result;
}

std::vector<double> predict_trace(const SystemConfig& config, const CoefficientSurfaces& surfaces,
                                  std::span<const double> times, const EvaluationOptions& opts) {
  config.validate();
  if (!config.in_calibrated_hull()) {
    spdlog::warn("config (d={} m, s={} ms, v={} V) is outside the calibrated range; extrapolating",
                 config.distance, config.spray_duration, config.initial_voltage);
  }
  std::vector<double> out;
  out.reserve(times.size());
  for (const double t : times) {
    if (!(t >= opts.t_min)) {
      throw std::invalid_argument("predict_trace: time " + std::to_string(t) +
                                  " is below t_min");
    }
    out.push_back(eval_universal_response(t, config, surfaces, opts));
  }
  return out;
}

} // namespace molchan
