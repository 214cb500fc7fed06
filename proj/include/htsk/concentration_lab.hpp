#pragma once

#include "htsk/ensembles.hpp"
#include "htsk/linalg.hpp"
#include "htsk/random_stream.hpp"
#include "htsk/set_geometry.hpp"
#include "htsk/tail_distributions.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace htsk {

enum class DeviationModel { RowWithB, RowIdentity, Column };

inline std::string_view to_string(DeviationModel m) {
  switch (m) {
    case DeviationModel::RowWithB: return "row_with_b";
    case DeviationModel::RowIdentity: return "row";
    case DeviationModel::Column: return "column";
  }
  return "unknown";
}

/// Z_x = ||M A x||_2 - c ||x||_2 with
///   RowWithB:    M = B, c = ||B||_HS
///   RowIdentity: M = I, c = sqrt(m)
///   Column:      M = I, c = lambda (1 for unit columns, sqrt(m) after normalization)
struct DeviationStatistic {
  DeviationModel model = DeviationModel::RowIdentity;
  std::optional<Matrix> B;
  double lambda = 1.0;
};

inline DeviationStatistic model_statistic(const EnsembleSpec& spec) {
  DeviationStatistic s;
  s.model = spec.kind == EnsembleKind::ColumnModel ? DeviationModel::Column : DeviationModel::RowIdentity;
  return s;
}

inline double target_scale(const DeviationStatistic& stat, Eigen::Index m) {
  switch (stat.model) {
    case DeviationModel::RowWithB: return hs_norm(*stat.B);
    case DeviationModel::RowIdentity: return std::sqrt(static_cast<double>(m));
    case DeviationModel::Column: return stat.lambda;
  }
  return 0.0;
}

inline void check_dimensions(const DeviationStatistic& stat, const Matrix& a, const Matrix& points) {
  if (points.cols() == 0) throw std::invalid_argument("point list is empty");
  if (a.cols() != points.rows())
    throw std::invalid_argument("dimension mismatch: matrix has " + std::to_string(a.cols()) +
                                " columns, points have dimension " + std::to_string(points.rows()));
  if (stat.model == DeviationModel::RowWithB) {
    if (!stat.B) throw std::invalid_argument("row_with_b statistic needs B");
    if (stat.B->cols() != a.rows()) throw std::invalid_argument("dimension mismatch between B and A");
  }
}

// Signed Z_x for every point (column of `points`).
inline Vector signed_deviations(const DeviationStatistic& stat, const Matrix& a, const Matrix& points) {
  check_dimensions(stat, a, points);
  Matrix image = a * points;
  if (stat.model == DeviationModel::RowWithB) image = (*stat.B) * image;
  const double c = target_scale(stat, a.rows());
  return image.colwise().norm().transpose() - c * points.colwise().norm().transpose();
}

// sup over the supplied finite list of |Z_x|.
inline double sup_deviation(const DeviationStatistic& stat, const Matrix& a, const Matrix& points) {
  return signed_deviations(stat, a, points).cwiseAbs().maxCoeff();
}

// Almost-sure Lipschitz constant of x -> |Z_x|: ||M A||_op + c. The bias of a
// sup over a net with resolution delta is at most this times delta.
inline double deviation_lipschitz(const DeviationStatistic& stat, const Matrix& a) {
  const Matrix ma = stat.model == DeviationModel::RowWithB ? Matrix((*stat.B) * a) : a;
  return operator_norm_power(ma).value + target_scale(stat, a.rows());
}

/// Runs `fn(i, stream.substream(i))` for i in [0, trials) on `workers`
/// threads. Results are stored by trial index, so the output does not depend
/// on the worker count. NaN marks a discarded trial.
template <typename Fn>
std::vector<double> run_trials(std::size_t trials, const RandomStream& stream, std::size_t workers, Fn&& fn) {
  std::vector<double> out(trials, 0.0);
  workers = std::max<std::size_t>(1, std::min(workers, trials));
  if (workers == 1) {
    for (std::size_t i = 0; i < trials; ++i) out[i] = fn(i, stream.substream(i));
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < trials; i += workers) out[i] = fn(i, stream.substream(i));
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t used_trials = 0;
  std::size_t discarded_trials = 0;
  std::optional<double> bound_ratio;
};

// Mean with a CLT 95% interval; NaN entries are counted as discarded.
inline McEstimate summarize(std::span<const double> values) {
  McEstimate est;
  CompensatedSum sum;
  for (double v : values) {
    if (std::isnan(v)) {
      ++est.discarded_trials;
      continue;
    }
    sum.add(v);
    ++est.used_trials;
  }
  if (est.used_trials == 0) return est;
  const double n = static_cast<double>(est.used_trials);
  est.mean = sum.value() / n;
  CompensatedSum sq;
  for (double v : values)
    if (!std::isnan(v)) sq.add((v - est.mean) * (v - est.mean));
  const double var = est.used_trials > 1 ? sq.value() / (n - 1.0) : 0.0;
  est.std_error = std::sqrt(var / n);
  est.ci_low = est.mean - 1.96 * est.std_error;
  est.ci_high = est.mean + 1.96 * est.std_error;
  return est;
}

// Geometry entering the bound: gamma_alpha(T) (upper estimate) and rad(T).
struct BoundTerms {
  double gamma_upper = 0.0;
  double rad = 0.0;
};

// Right-hand side scale of the expectation bound without its constant:
// rows K^(4/alpha) ||B||_op (gamma + rad), columns K (gamma + rad).
inline double bound_denominator(const EnsembleSpec& spec, const DeviationStatistic& stat, const BoundTerms& t) {
  const double geometry = t.gamma_upper + t.rad;
  if (stat.model == DeviationModel::Column) return spec.nominal_K * geometry;
  const double b_op = stat.model == DeviationModel::RowWithB ? operator_norm_power(*stat.B).value : 1.0;
  return std::pow(spec.nominal_K, 4.0 / spec.alpha) * b_op * geometry;
}

inline std::vector<double> mc_sup_deviations(const EnsembleSpec& spec, const DeviationStatistic& stat,
                                             const Matrix& points, std::size_t trials, const RandomStream& stream,
                                             std::size_t workers = 1) {
  validate(spec);
  return run_trials(trials, stream, workers, [&](std::size_t, const RandomStream& rs) {
    return sup_deviation(stat, generate(spec, rs), points);
  });
}

inline constexpr std::size_t kMinExpectationTrials = 100;

inline McEstimate mc_expectation(const EnsembleSpec& spec, const DeviationStatistic& stat, const Matrix& points,
                                 std::size_t trials, const RandomStream& stream, std::size_t workers = 1,
                                 std::optional<BoundTerms> bounds = std::nullopt) {
  if (trials < kMinExpectationTrials) throw std::invalid_argument("mc_expectation needs at least 100 trials");
  const auto values = mc_sup_deviations(spec, stat, points, trials, stream, workers);
  auto est = summarize(values);
  if (bounds) {
    const double denom = bound_denominator(spec, stat, *bounds);
    est.bound_ratio = denom > 0.0 ? est.mean / denom : 0.0;
  }
  return est;
}

struct NormalizedEstimate {
  McEstimate deviation;
  double event_probability = 0.0;
  std::size_t event_count = 0;
};

// Draws A from `spec`, keeps the trial only on the event F, and measures
// sup |‖Ã x‖ - sqrt(m) ‖x‖| for the column-normalized Ã.
inline NormalizedEstimate mc_expectation_normalized(const EnsembleSpec& spec, const Matrix& points,
                                                    std::size_t trials, const RandomStream& stream,
                                                    std::size_t workers = 1,
                                                    std::optional<BoundTerms> bounds = std::nullopt) {
  validate(spec);
  DeviationStatistic stat;
  stat.model = DeviationModel::Column;
  stat.lambda = std::sqrt(static_cast<double>(spec.m));
  const auto values = run_trials(trials, stream, workers, [&](std::size_t, const RandomStream& rs) {
    const auto outcome = normalize_columns(generate(spec, rs));
    if (!outcome.event_F) return std::numeric_limits<double>::quiet_NaN();
    return sup_deviation(stat, outcome.matrix, points);
  });
  NormalizedEstimate out;
  out.deviation = summarize(values);
  out.event_count = out.deviation.used_trials;
  out.event_probability = trials ? static_cast<double>(out.event_count) / static_cast<double>(trials) : 0.0;
  if (bounds) {
    const double denom = spec.nominal_K * (bounds->gamma_upper + bounds->rad);
    out.deviation.bound_ratio = denom > 0.0 ? out.deviation.mean / denom : 0.0;
  }
  return out;
}

struct TailFit {
  double exponent = 0.0;  // beta in log S(u) = a - b (u - u0)^beta
  double r2 = 0.0;
  double location = 0.0;  // u0
  double intercept = 0.0;
  double rate = 0.0;      // b
  std::size_t points_used = 0;
};

struct TailCurve {
  std::vector<double> thresholds;
  std::vector<double> survival;  // fraction of values strictly above the threshold
  std::vector<double> ci_low;    // Wilson 95%
  std::vector<double> ci_high;
  std::size_t trials = 0;
  std::optional<TailFit> fit;
};

// Thresholds at empirical quantiles whose survival levels are log-spaced from
// 0.5 down to 10 / N (the tail-fit window).
inline std::vector<double> quantile_thresholds(std::span<const double> values, std::size_t count = 40) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  std::vector<double> out;
  if (sorted.empty() || count == 0) return out;
  const double lo = std::log(0.5);
  const double hi = std::log(std::min(0.5, 10.0 / n));
  for (std::size_t k = 0; k < count; ++k) {
    const double level = std::exp(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1));
    const auto idx = static_cast<std::size_t>(std::clamp(std::floor((1.0 - level) * n), 0.0, n - 1.0));
    out.push_back(sorted[idx]);
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::pair<double, double> wilson_interval(double successes, double n, double z = 1.96) {
  if (n <= 0.0) return {0.0, 1.0};
  const double p = successes / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

inline TailCurve tail_curve_from_values(std::span<const double> values, std::span<const double> thresholds) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  TailCurve c;
  c.trials = sorted.size();
  c.thresholds.assign(thresholds.begin(), thresholds.end());
  std::sort(c.thresholds.begin(), c.thresholds.end());
  const double n = static_cast<double>(c.trials);
  for (double t : c.thresholds) {
    const auto above = static_cast<double>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), t));
    c.survival.push_back(n > 0.0 ? above / n : 0.0);
    const auto [lo, hi] = wilson_interval(above, n);
    c.ci_low.push_back(lo);
    c.ci_high.push_back(hi);
  }
  return c;
}

inline constexpr double kTailWindowHigh = 0.5;
inline constexpr double kTailWindowLowCount = 10.0;

namespace detail {

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double sse = std::numeric_limits<double>::infinity();
  double sst = 0.0;
};

inline LineFit least_squares(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit f;
  f.sst = syy;
  if (sxx <= 0.0) return f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.sse = std::max(0.0, syy - f.slope * sxy);
  return f;
}

}  // namespace detail

/// Tail-exponent fit: least squares of log S(u) on -(u - u0)^beta over the
/// window S in [10/N, 0.5], with beta chosen to minimize the residual sum of
/// squares (grid on [0.05, 4] in steps of 0.005, then golden-section
/// refinement). Needs at least three usable points.
inline std::optional<TailFit> fit_tail_exponent(const TailCurve& curve, double location = 0.0) {
  std::vector<double> u, y;
  const double lo = kTailWindowLowCount / static_cast<double>(std::max<std::size_t>(curve.trials, 1));
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    const double s = curve.survival[i];
    const double du = curve.thresholds[i] - location;
    if (s >= lo && s <= kTailWindowHigh && s > 0.0 && du > 0.0) {
      u.push_back(du);
      y.push_back(std::log(s));
    }
  }
  if (u.size() < 3) return std::nullopt;
  std::vector<double> x(u.size());
  auto fit_at = [&](double beta) {
    for (std::size_t i = 0; i < u.size(); ++i) x[i] = -std::pow(u[i], beta);
    return detail::least_squares(x, y);
  };
  double best_beta = 0.05;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 790; ++k) {
    const double beta = 0.05 + 0.005 * k;
    const double sse = fit_at(beta).sse;
    if (sse < best_sse) {
      best_sse = sse;
      best_beta = beta;
    }
  }
  double a = std::max(0.05, best_beta - 0.005);
  double b = std::min(4.0, best_beta + 0.005);
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 40; ++it) {
    const double c1 = b - g * (b - a);
    const double c2 = a + g * (b - a);
    if (fit_at(c1).sse <= fit_at(c2).sse)
      b = c2;
    else
      a = c1;
  }
  const double beta = fit_at(0.5 * (a + b)).sse <= best_sse ? 0.5 * (a + b) : best_beta;
  const auto line = fit_at(beta);
  TailFit fit;
  fit.exponent = beta;
  fit.location = location;
  fit.intercept = line.intercept;
  fit.rate = line.slope;
  fit.points_used = u.size();
  fit.r2 = line.sst > 0.0 ? 1.0 - line.sse / line.sst : 1.0;
  return fit;
}

inline constexpr std::size_t kMinTailFitTrials = 10000;

// Survival curve of the sup-deviation statistic. Empty `thresholds` selects
// quantile_thresholds(values).
inline TailCurve mc_tail_curve(const EnsembleSpec& spec, const DeviationStatistic& stat, const Matrix& points,
                               std::size_t trials, std::span<const double> thresholds, const RandomStream& stream,
                               std::size_t workers = 1) {
  const auto values = mc_sup_deviations(spec, stat, points, trials, stream, workers);
  const auto thr = thresholds.empty() ? quantile_thresholds(values) : std::vector<double>(thresholds.begin(), thresholds.end());
  auto curve = tail_curve_from_values(values, thr);
  curve.fit = fit_tail_exponent(curve);
  return curve;
}

struct EnvelopeCheck {
  std::vector<double> envelope;
  bool ok = true;
  double worst_excess = -std::numeric_limits<double>::infinity();  // max_t S(t) - env(t) - 4 sigma
};

// S(t) <= min(1, env(t)) + 4 sqrt(p (1 - p) / N), p = min(1, env(t)), at every threshold.
inline EnvelopeCheck check_envelope(const TailCurve& curve, const std::function<double(double)>& env) {
  EnvelopeCheck out;
  const double n = static_cast<double>(std::max<std::size_t>(curve.trials, 1));
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    const double p = std::min(1.0, env(curve.thresholds[i]));
    out.envelope.push_back(p);
    const double excess = curve.survival[i] - p - 4.0 * std::sqrt(p * (1.0 - p) / n);
    out.worst_excess = std::max(out.worst_excess, excess);
    if (excess > 0.0) out.ok = false;
  }
  return out;
}

// For an envelope 2 exp(-g(t)/C): the smallest C consistent with each
// observed S(t) > 0, namely g(t) / ln(2 / S(t)).
inline std::vector<double> implied_envelope_constants(const TailCurve& curve,
                                                      const std::function<double(double)>& g) {
  std::vector<double> out;
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    const double s = curve.survival[i];
    const double gt = g(curve.thresholds[i]);
    if (s > 0.0 && std::isfinite(gt)) out.push_back(gt / std::log(2.0 / s));
  }
  return out;
}

struct ScalarTailCheck {
  TailCurve curve;
  EnvelopeCheck envelope;
  std::vector<double> implied_constants;
  double K = 0.0;
  double hs_norm = 0.0;
  double op_norm = 0.0;
};

inline void require_standardized(const TailLaw& law) {
  if (std::abs(law.variance() - 1.0) > 1e-9) throw std::invalid_argument("law must be standardized (unit variance)");
}

/// Hanson-Wright check: survival of |X^T M X - E X^T M X| (E = trace M for a
/// standardized law) against 2 exp(-min(t^2 / (K^4 ||M||_HS^2),
/// (t / (K^2 ||M||_op))^(alpha/2)) / C).
inline ScalarTailCheck hanson_wright_check(const TailLaw& law, const Matrix& m_in, std::size_t trials,
                                           const RandomStream& stream, double c_hat, std::size_t workers = 1,
                                           std::span<const double> thresholds = {}, bool symmetrize_input = false) {
  require_standardized(law);
  if (!is_symmetric(m_in)) {
    if (!symmetrize_input) throw std::invalid_argument("matrix is not symmetric (pass symmetrize to fix)");
  }
  const Matrix m = symmetrize_input ? symmetrize(m_in) : m_in;
  const auto n = static_cast<std::size_t>(m.rows());
  const double mean = m.trace();
  const auto values = run_trials(trials, stream, workers, [&](std::size_t, RandomStream rs) {
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) x(i) = sample(law, rs);
    return std::abs(x.dot(m * x) - mean);
  });
  ScalarTailCheck out;
  out.K = psi_norm(law).value;
  out.hs_norm = hs_norm(m);
  out.op_norm = symmetric_operator_norm(m);
  const auto thr = thresholds.empty() ? quantile_thresholds(values) : std::vector<double>(thresholds.begin(), thresholds.end());
  out.curve = tail_curve_from_values(values, thr);
  out.curve.fit = fit_tail_exponent(out.curve);
  const double k = out.K, hs = out.hs_norm, op = out.op_norm, a = law.alpha();
  auto g = [=](double t) {
    if (hs == 0.0) return std::numeric_limits<double>::infinity();
    return std::min(t * t / (std::pow(k, 4) * hs * hs), std::pow(t / (k * k * op), a / 2.0));
  };
  out.envelope = check_envelope(out.curve, [&](double t) { return 2.0 * std::exp(-g(t) / c_hat); });
  out.implied_constants = implied_envelope_constants(out.curve, g);
  return out;
}

/// Norm concentration check: survival of |‖BX‖ - ‖B‖_HS| / (K^2 ‖B‖_op)
/// against 2 exp(-t^alpha / C). The statistic is 0 when B = 0.
inline ScalarTailCheck bx_norm_check(const TailLaw& law, const Matrix& b, std::size_t trials,
                                     const RandomStream& stream, double c_hat, std::size_t workers = 1,
                                     std::span<const double> thresholds = {}) {
  require_standardized(law);
  ScalarTailCheck out;
  out.K = psi_norm(law).value;
  out.hs_norm = hs_norm(b);
  out.op_norm = operator_norm_power(b).value;
  const double scale = out.K * out.K * out.op_norm;
  const auto n = static_cast<std::size_t>(b.cols());
  const auto values = run_trials(trials, stream, workers, [&](std::size_t, RandomStream rs) {
    if (scale == 0.0) return 0.0;
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) x(i) = sample(law, rs);
    return std::abs((b * x).norm() - out.hs_norm) / scale;
  });
  const auto thr = thresholds.empty() ? quantile_thresholds(values) : std::vector<double>(thresholds.begin(), thresholds.end());
  out.curve = tail_curve_from_values(values, thr);
  out.curve.fit = fit_tail_exponent(out.curve);
  const double a = law.alpha();
  auto g = [a](double t) { return std::pow(std::max(t, 0.0), a); };
  out.envelope = check_envelope(out.curve, [&](double t) { return 2.0 * std::exp(-g(t) / c_hat); });
  out.implied_constants = implied_envelope_constants(out.curve, g);
  return out;
}

// psi_alpha estimate of ‖Ax‖_2 - 1 for a column-model ensemble and unit x.
inline PsiNormEstimate column_single_vector_check(const EnsembleSpec& spec, const Vector& x, std::size_t trials,
                                                  const RandomStream& stream, std::size_t workers = 1) {
  if (spec.kind != EnsembleKind::ColumnModel) throw std::invalid_argument("column_single_vector_check needs a column model");
  if (static_cast<std::size_t>(x.size()) != spec.n) throw std::invalid_argument("dimension mismatch");
  if (std::abs(x.norm() - 1.0) > 1e-12) throw std::invalid_argument("x must be a unit vector");
  const auto values = run_trials(trials, stream, workers, [&](std::size_t, const RandomStream& rs) {
    return (gen_column_model(spec, rs) * x).norm() - 1.0;
  });
  return psi_norm_bisection(values, spec.alpha);
}

// psi_alpha estimate of (Z_x - Z_y) / ‖x - y‖_2 with Z from `stat`.
inline PsiNormEstimate increment_check(const EnsembleSpec& spec, const DeviationStatistic& stat, const Vector& x,
                                       const Vector& y, std::size_t trials, const RandomStream& stream,
                                       std::size_t workers = 1) {
  if (x.size() != y.size()) throw std::invalid_argument("dimension mismatch");
  const double dist = (x - y).norm();
  if (dist == 0.0) throw std::invalid_argument("increment check needs x != y");
  Matrix pts(x.size(), 2);
  pts.col(0) = x;
  pts.col(1) = y;
  const auto values = run_trials(trials, stream, workers, [&](std::size_t, const RandomStream& rs) {
    const Vector z = signed_deviations(stat, generate(spec, rs), pts);
    return (z(0) - z(1)) / dist;
  });
  return psi_norm_bisection(values, spec.alpha);
}

}  // namespace htsk
