#pragma once

#include "htsk/random_stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace htsk {

enum class Family { SymmetricWeibull, Gaussian, Rademacher, Uniform, CustomEmpirical };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::SymmetricWeibull: return "symmetric_weibull";
    case Family::Gaussian: return "gaussian";
    case Family::Rademacher: return "rademacher";
    case Family::Uniform: return "uniform";
    case Family::CustomEmpirical: return "custom_empirical";
  }
  return "unknown";
}

inline Family family_from_string(std::string_view s) {
  for (Family f : {Family::SymmetricWeibull, Family::Gaussian, Family::Rademacher, Family::Uniform,
                   Family::CustomEmpirical})
    if (to_string(f) == s) return f;
  throw std::invalid_argument("unknown law family: " + std::string(s));
}

inline void validate_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 2.0))
    throw std::invalid_argument("alpha must lie in (0, 2], got " + std::to_string(alpha));
}

/// A symmetric scalar law X = scale * Y, where Y is the unit member of the
/// family:
///   SymmetricWeibull: Y = sign * E^(1/alpha), E ~ Exp(1), so P(|Y| > t) = exp(-t^alpha)
///   Gaussian:         Y ~ N(0, 1)
///   Rademacher:       Y uniform on {-1, +1}
///   Uniform:          Y ~ U[-1, 1]   (scale is the half width a)
///   CustomEmpirical:  Y = sign * z, z drawn uniformly from the stored support
/// `alpha` is the tail index under which psi norms of the law are taken.
class TailLaw {
 public:
  static TailLaw symmetric_weibull(double alpha, double scale = 1.0) {
    return TailLaw(Family::SymmetricWeibull, alpha, scale, {});
  }
  static TailLaw gaussian(double scale = 1.0, double alpha = 2.0) {
    return TailLaw(Family::Gaussian, alpha, scale, {});
  }
  static TailLaw rademacher(double scale = 1.0, double alpha = 2.0) {
    return TailLaw(Family::Rademacher, alpha, scale, {});
  }
  static TailLaw uniform(double half_width = 1.0, double alpha = 2.0) {
    return TailLaw(Family::Uniform, alpha, half_width, {});
  }
  static TailLaw custom_empirical(std::vector<double> support, double alpha, double scale = 1.0) {
    if (support.empty()) throw std::invalid_argument("empirical law needs at least one value");
    for (double& z : support) {
      if (!std::isfinite(z)) throw std::invalid_argument("empirical law values must be finite");
      z = std::abs(z);
    }
    return TailLaw(Family::CustomEmpirical, alpha, scale,
                   std::make_shared<const std::vector<double>>(std::move(support)));
  }

  Family family() const { return family_; }
  double alpha() const { return alpha_; }
  double scale() const { return scale_; }

  // Absolute values of the empirical support (CustomEmpirical only).
  std::span<const double> support() const {
    if (!support_) return {};
    return *support_;
  }

  TailLaw with_scale(double scale) const { return TailLaw(family_, alpha_, scale, support_); }
  TailLaw with_alpha(double alpha) const { return TailLaw(family_, alpha, scale_, support_); }

  // log E|X|^q for q >= 0. Exact for every family (the empirical law is its
  // own support).
  double log_abs_moment(double q) const {
    if (q == 0.0) return 0.0;
    return q * std::log(scale_) + unit_log_abs_moment(q);
  }

  double variance() const { return std::exp(log_abs_moment(2.0)); }

  // Exact P(|X| > t) where the family has one.
  std::optional<double> survival(double t) const {
    if (t < 0.0) return 1.0;
    const double y = t / scale_;
    switch (family_) {
      case Family::SymmetricWeibull: return std::exp(-std::pow(y, alpha_));
      case Family::Gaussian: return std::erfc(y / std::numbers::sqrt2);
      case Family::Rademacher: return y < 1.0 ? 1.0 : 0.0;
      case Family::Uniform: return std::max(0.0, 1.0 - y);
      case Family::CustomEmpirical: {
        const auto& s = *support_;
        const auto n = std::count_if(s.begin(), s.end(), [y](double z) { return z > y; });
        return static_cast<double>(n) / static_cast<double>(s.size());
      }
    }
    return std::nullopt;
  }

 private:
  TailLaw(Family family, double alpha, double scale, std::shared_ptr<const std::vector<double>> support)
      : family_(family), alpha_(alpha), scale_(scale), support_(std::move(support)) {
    validate_alpha(alpha_);
    if (!(scale_ > 0.0) || !std::isfinite(scale_))
      throw std::invalid_argument("scale must be positive and finite");
  }

  double unit_log_abs_moment(double q) const {
    switch (family_) {
      case Family::SymmetricWeibull: return std::lgamma(q / alpha_ + 1.0);
      case Family::Gaussian:
        return 0.5 * q * std::numbers::ln2 + std::lgamma(0.5 * (q + 1.0)) - 0.5 * std::log(std::numbers::pi);
      case Family::Rademacher: return 0.0;
      case Family::Uniform: return -std::log(q + 1.0);
      case Family::CustomEmpirical: {
        const auto& s = *support_;
        double mx = 0.0;
        for (double z : s) mx = std::max(mx, z);
        if (mx == 0.0) return -std::numeric_limits<double>::infinity();
        double acc = 0.0;
        for (double z : s) acc += std::pow(z / mx, q);
        return q * std::log(mx) + std::log(acc / static_cast<double>(s.size()));
      }
    }
    return std::numeric_limits<double>::quiet_NaN();
  }

  Family family_;
  double alpha_;
  double scale_;
  std::shared_ptr<const std::vector<double>> support_;
};

inline double sample(const TailLaw& law, RandomStream& stream) {
  switch (law.family()) {
    case Family::SymmetricWeibull: {
      const double s = stream.sign();
      return law.scale() * s * std::pow(stream.exponential(), 1.0 / law.alpha());
    }
    case Family::Gaussian: return law.scale() * stream.normal();
    case Family::Rademacher: return law.scale() * stream.sign();
    case Family::Uniform: return law.scale() * (2.0 * stream.uniform() - 1.0);
    case Family::CustomEmpirical: {
      const auto s = law.support();
      const double z = s[stream.below(s.size())];
      return law.scale() * stream.sign() * z;
    }
  }
  return 0.0;
}

inline std::vector<double> sample_n(const TailLaw& law, RandomStream& stream, std::size_t count) {
  std::vector<double> out(count);
  for (double& x : out) x = sample(law, stream);
  return out;
}

// Rescales the law to unit variance. For SymmetricWeibull(alpha, 1) the
// variance is Gamma(2/alpha + 1).
inline TailLaw standardize(const TailLaw& law) {
  const double unit_var = law.with_scale(1.0).variance();
  if (!(unit_var > 0.0) || !std::isfinite(unit_var))
    throw std::invalid_argument("law has no finite positive variance");
  return law.with_scale(1.0 / std::sqrt(unit_var));
}

// Slack factor for triangle-type inequalities: psi_alpha is only a
// quasi-norm when alpha < 1, ||X + Y|| <= 2^(1/alpha - 1) (||X|| + ||Y||).
inline double quasi_norm_slack(double alpha) {
  validate_alpha(alpha);
  return alpha < 1.0 ? std::pow(2.0, 1.0 / alpha - 1.0) : 1.0;
}

// Norm arithmetic for psi_alpha. These restate standard identities so call
// sites read as the inequality they rely on; they are not verified separately.
namespace psi_arith {

// ||X^p||_{psi_alpha} = ||X||_{psi_{p alpha}}^p.
inline double power(double norm_at_p_alpha, double p) { return std::pow(norm_at_p_alpha, p); }

// ||XY||_{psi_alpha} <= ||X||_{psi_{p alpha}} ||Y||_{psi_{q alpha}}, 1/p + 1/q = 1.
inline double product_bound(double x_norm_p_alpha, double y_norm_q_alpha) {
  return x_norm_p_alpha * y_norm_q_alpha;
}

// ||X - EX||_{psi_alpha} <= C(alpha) ||X||_{psi_alpha}; C is caller supplied.
inline double centering_bound(double norm, double c_alpha) { return c_alpha * norm; }

// ||X + Y||_{psi_alpha} <= 2^(1/alpha - 1)_+ (||X|| + ||Y||).
inline double sum_bound(double x_norm, double y_norm, double alpha) {
  return quasi_norm_slack(alpha) * (x_norm + y_norm);
}

}  // namespace psi_arith

enum class PsiMethod { BisectionMgf, MomentSeries, ClosedForm };

inline std::string_view to_string(PsiMethod m) {
  switch (m) {
    case PsiMethod::BisectionMgf: return "bisection-mgf";
    case PsiMethod::MomentSeries: return "moment-series";
    case PsiMethod::ClosedForm: return "closed-form";
  }
  return "unknown";
}

struct PsiNormEstimate {
  double value = 0.0;
  PsiMethod method = PsiMethod::ClosedForm;
  std::size_t sample_count = 0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

class NoClosedForm : public std::invalid_argument {
 public:
  explicit NoClosedForm(const std::string& what) : std::invalid_argument(what) {}
};

class NormAboveBracket : public std::runtime_error {
 public:
  NormAboveBracket(double lo, double hi)
      : std::runtime_error("psi norm lies above bracket [" + std::to_string(lo) + ", " + std::to_string(hi) +
                           "]"),
        lo_(lo),
        hi_(hi) {}
  double lo() const { return lo_; }
  double hi() const { return hi_; }

 private:
  double lo_;
  double hi_;
};

inline PsiNormEstimate exact_estimate(double value, PsiMethod method) {
  return {value, method, 0, value, value};
}

// inf{t : E exp(|X/t|^alpha) <= 2} in closed form:
//   SymmetricWeibull(alpha, s): |X/s|^alpha ~ Exp(1), E exp = 1/(1 - (s/t)^alpha)  ->  s 2^(1/alpha)
//   Gaussian(s) at alpha = 2:   E exp = (1 - 2 s^2/t^2)^(-1/2)                    ->  s sqrt(8/3)
//   Rademacher(s):              E exp = exp((s/t)^alpha)                          ->  s (1/ln 2)^(1/alpha)
inline PsiNormEstimate psi_norm_closed_form(const TailLaw& law) {
  const double a = law.alpha();
  const double s = law.scale();
  switch (law.family()) {
    case Family::SymmetricWeibull:
      return exact_estimate(s * std::pow(2.0, 1.0 / a), PsiMethod::ClosedForm);
    case Family::Gaussian:
      if (a == 2.0) return exact_estimate(s * std::sqrt(8.0 / 3.0), PsiMethod::ClosedForm);
      break;
    case Family::Rademacher:
      return exact_estimate(s * std::pow(1.0 / std::numbers::ln2, 1.0 / a), PsiMethod::ClosedForm);
    default: break;
  }
  throw NoClosedForm("no closed form psi norm for family " + std::string(to_string(law.family())) +
                     " at alpha " + std::to_string(a));
}

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

// log E exp(|X/t|^alpha) = log sum_k E|X|^(alpha k) / (t^(alpha k) k!).
// Returns +inf when the series does not converge within the term budget.
inline double log_mgf_series(const std::function<double(double)>& log_moment, double alpha, double t) {
  constexpr std::size_t kMaxTerms = 200000;
  const double log_t = std::log(t);
  double log_sum = 0.0;  // k = 0 term is 1
  double prev = 0.0;
  for (std::size_t k = 1; k < kMaxTerms; ++k) {
    const double kk = static_cast<double>(k);
    const double term = log_moment(alpha * kk) - alpha * kk * log_t - std::lgamma(kk + 1.0);
    if (std::isnan(term)) return std::numeric_limits<double>::infinity();
    log_sum = log_add(log_sum, term);
    if (!std::isfinite(log_sum)) return std::numeric_limits<double>::infinity();
    if (k > 2 && term < prev && term < log_sum - 40.0) return log_sum;
    if (k >= 1000 && term >= prev) return std::numeric_limits<double>::infinity();
    prev = term;
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace detail

// psi_alpha norm from an exact absolute-moment function q -> log E|X|^q, by
// bisection on the moment series of E exp(|X/t|^alpha).
inline PsiNormEstimate psi_norm_moment_series(const std::function<double(double)>& log_moment, double alpha) {
  validate_alpha(alpha);
  const double l2 = std::exp(0.5 * log_moment(2.0));
  if (!(l2 > 0.0)) return exact_estimate(0.0, PsiMethod::MomentSeries);
  const double ln2 = std::numbers::ln2;
  auto above = [&](double t) { return detail::log_mgf_series(log_moment, alpha, t) > ln2; };
  double lo = l2;
  double hi = l2;
  for (int i = 0; i < 200 && !above(lo); ++i) lo *= 0.5;
  for (int i = 0; i < 200 && above(hi); ++i) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-13 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (above(mid) ? lo : hi) = mid;
  }
  return exact_estimate(hi, PsiMethod::MomentSeries);
}

inline PsiNormEstimate psi_norm_moment_series(const TailLaw& law) {
  return psi_norm_moment_series([&law](double q) { return law.log_abs_moment(q); }, law.alpha());
}

inline constexpr std::size_t kMinPsiSamples = 10000;

struct PsiBracket {
  double lo;
  double hi;
};

namespace detail {

// Log-space streaming accumulation of exp(a_i) and exp(2 a_i), with
// a_i = |x_i / t|^alpha, rescaled against the running maximum.
struct EmpiricalMgf {
  double max_a = -std::numeric_limits<double>::infinity();
  double s1 = 0.0;  // sum exp(a_i - max_a)
  double s2 = 0.0;  // sum exp(2 (a_i - max_a))
  std::size_t n = 0;

  // `log_abs` holds log|x_i| (-inf for zeros).
  static EmpiricalMgf evaluate(std::span<const double> log_abs, double alpha, double t) {
    EmpiricalMgf m;
    const double log_t = std::log(t);
    for (double lx : log_abs) {
      const double a = std::exp(alpha * (lx - log_t));
      if (a > m.max_a) {
        const double r = std::exp(m.max_a - a);
        m.s1 = m.s1 * r + 1.0;
        m.s2 = m.s2 * r * r + 1.0;
        m.max_a = a;
      } else {
        const double e = std::exp(a - m.max_a);
        m.s1 += e;
        m.s2 += e * e;
      }
      ++m.n;
    }
    return m;
  }

  // log(mean + z * stderr); -inf if the quantity is non-positive.
  double log_mean_shifted(double z) const {
    const double nn = static_cast<double>(n);
    const double mean = s1 / nn;
    const double var = std::max(0.0, s2 / nn - mean * mean);
    const double q = mean + z * std::sqrt(var / nn);
    if (q <= 0.0) return -std::numeric_limits<double>::infinity();
    return max_a + std::log(q);
  }
};

inline std::vector<double> log_abs_values(std::span<const double> xs) {
  std::vector<double> out(xs.size());
  std::transform(xs.begin(), xs.end(), out.begin(), [](double x) { return std::log(std::abs(x)); });
  return out;
}

// Smallest t in [lo, hi] (hi doubled as needed) with log(mean + z stderr) <= ln 2,
// to relative width `rel_tol`.
inline double solve_mgf_level(std::span<const double> log_abs, double alpha, double z, double lo, double hi,
                              double rel_tol) {
  auto holds = [&](double t) { return EmpiricalMgf::evaluate(log_abs, alpha, t).log_mean_shifted(z) <= std::numbers::ln2; };
  if (holds(lo)) return lo;
  for (int i = 0; i < 200 && !holds(hi); ++i) hi *= 2.0;
  while (hi - lo >= rel_tol * lo) {
    const double mid = 0.5 * (lo + hi);
    (holds(mid) ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

// mean - z stderr is not monotone in t for heavy tails (the stderr can
// exceed the mean at small t), so the lower confidence end walks down from
// the point estimate to the first failure and bisects back.
inline double solve_lower_level(std::span<const double> log_abs, double alpha, double z, double floor, double start,
                                double rel_tol) {
  auto holds = [&](double t) { return EmpiricalMgf::evaluate(log_abs, alpha, t).log_mean_shifted(z) <= std::numbers::ln2; };
  double hi = start;
  double lo = start * 0.98;
  while (lo > floor && holds(lo)) {
    hi = lo;
    lo *= 0.98;
  }
  if (lo <= floor) return floor;
  while (hi - lo >= rel_tol * lo) {
    const double mid = 0.5 * (lo + hi);
    (holds(mid) ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Empirical psi_alpha norm: the smallest t with mean_i exp(|x_i/t|^alpha) <= 2.
///
/// The empirical MGF is strictly decreasing in t, so the level-2 crossing is
/// unique and bisection applies. The default bracket is
/// [max|x| / (N ln 2)^(1/alpha), max|x| / (ln 2)^(1/alpha)]: at the lower end
/// the largest term alone is 2^N, at the upper end every term is <= 2.
/// Bisection stops once the bracket is narrower than 1e-4 * t. The 95% interval
/// comes from solving mean(t) -/+ 1.96 stderr(t) = 2 the same way.
inline PsiNormEstimate psi_norm_bisection(std::span<const double> samples, double alpha,
                                          std::optional<PsiBracket> bracket = std::nullopt) {
  validate_alpha(alpha);
  if (samples.empty()) throw std::invalid_argument("psi norm needs samples");
  if (samples.size() < kMinPsiSamples)
    throw std::invalid_argument("psi norm bisection needs at least 10^4 samples, got " +
                                std::to_string(samples.size()));
  double max_abs = 0.0;
  for (double x : samples) {
    if (!std::isfinite(x)) throw std::invalid_argument("psi norm samples must be finite");
    max_abs = std::max(max_abs, std::abs(x));
  }
  PsiNormEstimate out;
  out.method = PsiMethod::BisectionMgf;
  out.sample_count = samples.size();
  if (max_abs == 0.0) return out;

  const double ln2 = std::numbers::ln2;
  const double nn = static_cast<double>(samples.size());
  PsiBracket br = bracket.value_or(
      PsiBracket{max_abs / std::pow(ln2 * nn, 1.0 / alpha), max_abs / std::pow(ln2, 1.0 / alpha)});
  if (!(br.lo > 0.0 && br.hi > br.lo)) throw std::invalid_argument("invalid psi bracket");

  const auto log_abs = detail::log_abs_values(samples);
  if (detail::EmpiricalMgf::evaluate(log_abs, alpha, br.hi).log_mean_shifted(0.0) > ln2)
    throw NormAboveBracket(br.lo, br.hi);

  constexpr double kRelTol = 1e-4;
  out.value = detail::solve_mgf_level(log_abs, alpha, 0.0, br.lo, br.hi, kRelTol);
  out.ci_low = detail::solve_lower_level(log_abs, alpha, -1.96, br.lo, out.value, kRelTol);
  out.ci_high = std::max(out.value, detail::solve_mgf_level(log_abs, alpha, 1.96, out.value, br.hi, kRelTol));
  return out;
}

// Best exact psi_alpha norm of a law at its own alpha: closed form where one
// exists, otherwise the moment series.
inline PsiNormEstimate psi_norm(const TailLaw& law) {
  if (law.family() == Family::CustomEmpirical) {
    // The empirical law is its own support, so the support mean is exact.
    const auto s = law.support();
    const double mx = *std::max_element(s.begin(), s.end());
    if (mx == 0.0) return exact_estimate(0.0, PsiMethod::BisectionMgf);
    const double a = law.alpha();
    const double n = static_cast<double>(s.size());
    const auto log_abs = detail::log_abs_values(s);
    const double t = detail::solve_mgf_level(log_abs, a, 0.0, mx / std::pow(std::numbers::ln2 * n, 1.0 / a),
                                             mx / std::pow(std::numbers::ln2, 1.0 / a), 1e-12);
    auto est = exact_estimate(law.scale() * t, PsiMethod::BisectionMgf);
    est.sample_count = s.size();
    return est;
  }
  try {
    return psi_norm_closed_form(law);
  } catch (const NoClosedForm&) {
    return psi_norm_moment_series(law);
  }
}

struct MomentGrowthEntry {
  int p = 0;
  double lp_norm = 0.0;
  double ratio = 0.0;  // ||X||_p / (p^(1/alpha) ||X||_psi_alpha)
};

struct MomentGrowthReport {
  double psi_norm = 0.0;
  PsiMethod psi_method = PsiMethod::ClosedForm;
  std::vector<MomentGrowthEntry> entries;
  double max_ratio = 0.0;
  bool within_bound = true;  // every ratio <= 4
};

inline constexpr double kMomentGrowthConstant = 4.0;

inline MomentGrowthReport moment_growth_check(const TailLaw& law, std::span<const int> p_list) {
  MomentGrowthReport rep;
  const auto psi = psi_norm(law);
  rep.psi_norm = psi.value;
  rep.psi_method = psi.method;
  for (int p : p_list) {
    if (p < 1) throw std::invalid_argument("moment order must be >= 1");
    const double pd = static_cast<double>(p);
    const double lp = std::exp(law.log_abs_moment(pd) / pd);
    if (!std::isfinite(lp)) throw std::domain_error("non-finite moment estimate at p = " + std::to_string(p));
    const double ratio = psi.value > 0.0 ? lp / (std::pow(pd, 1.0 / law.alpha()) * psi.value) : 0.0;
    rep.entries.push_back({p, lp, ratio});
    rep.max_ratio = std::max(rep.max_ratio, ratio);
  }
  rep.within_bound = rep.max_ratio <= kMomentGrowthConstant;
  return rep;
}

}  // namespace htsk
