#pragma once

#include "htsk/concentration_lab.hpp"
#include "htsk/ensembles.hpp"
#include "htsk/linalg.hpp"
#include "htsk/random_stream.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace htsk {

enum class DesignModel { Row, Column };

inline std::string_view to_string(DesignModel m) { return m == DesignModel::Row ? "row" : "column"; }

inline DesignModel design_model_of(const EnsembleSpec& spec) {
  return spec.kind == EnsembleKind::ColumnModel ? DesignModel::Column : DesignModel::Row;
}

// Power of K in the dimension formulas: rows K^(8/alpha), columns K^2.
inline double dimension_K_factor(DesignModel model, double K, double alpha) {
  return model == DesignModel::Row ? std::pow(K, 8.0 / alpha) : K * K;
}

inline void validate_jl(double eps, double delta) {
  if (!(eps > 0.0 && eps <= 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1]");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
}

// C K^e eps^-2 (log(1/delta))^(2/alpha) before rounding.
inline double jl_dim_formula(double eps, double delta, double alpha, double K, DesignModel model, double C) {
  validate_jl(eps, delta);
  validate_alpha(alpha);
  return C * dimension_K_factor(model, K, alpha) / (eps * eps) * std::pow(std::log(1.0 / delta), 2.0 / alpha);
}

inline std::size_t jl_dim(double eps, double delta, double alpha, double K, DesignModel model, double C) {
  return static_cast<std::size_t>(std::max(1.0, std::ceil(jl_dim_formula(eps, delta, alpha, K, model, C))));
}

// Scale that makes the embedding isometric in expectation: 1/sqrt(m) for
// isotropic rows, 1 for unit columns.
inline double embedding_scale(const EnsembleSpec& spec) {
  return spec.kind == EnsembleKind::ColumnModel ? 1.0 : 1.0 / std::sqrt(static_cast<double>(spec.m));
}

struct JLReport {
  std::size_t m = 0;
  double eps = 0.0;
  std::size_t trials = 0;
  std::size_t pairs = 0;               // distinct pairs scored per trial
  std::size_t coincident_pairs = 0;    // skipped, x_i == x_j
  std::vector<double> ok_fraction;     // per trial: pairs within (1 +/- eps)
  std::size_t trials_all_ok = 0;
  double mean_ok_fraction = 0.0;
  double worst_distortion = 0.0;       // max over trials and pairs of |ratio - 1|
};

/// Embeds the columns of `points` with A drawn from `spec` (scaled by
/// embedding_scale) and scores ‖Ax - Ay‖ / ‖x - y‖ ∈ [1 - eps, 1 + eps]
/// for every pair. Coincident pairs are skipped and counted.
inline JLReport jl_embed_and_score(const Matrix& points, const EnsembleSpec& spec, double eps, std::size_t trials,
                                   const RandomStream& stream, std::size_t workers = 1) {
  if (!(eps > 0.0 && eps <= 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1]");
  if (static_cast<std::size_t>(points.rows()) != spec.n) throw std::invalid_argument("dimension mismatch");
  const auto np = static_cast<std::size_t>(points.cols());
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> dists;
  JLReport rep;
  rep.m = spec.m;
  rep.eps = eps;
  rep.trials = trials;
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = i + 1; j < np; ++j) {
      const double d = (points.col(i) - points.col(j)).norm();
      if (d == 0.0) {
        ++rep.coincident_pairs;
        continue;
      }
      pairs.emplace_back(i, j);
      dists.push_back(d);
    }
  rep.pairs = pairs.size();
  if (pairs.empty()) throw std::invalid_argument("JL scoring needs at least two distinct points");
  const double scale = embedding_scale(spec);
  std::vector<double> worst(trials, 0.0);
  rep.ok_fraction = run_trials(trials, stream, workers, [&](std::size_t t, const RandomStream& rs) {
    const Matrix image = scale * (generate(spec, rs) * points);
    std::size_t ok = 0;
    double w = 0.0;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const double r = (image.col(pairs[k].first) - image.col(pairs[k].second)).norm() / dists[k];
      w = std::max(w, std::abs(r - 1.0));
      if (r >= 1.0 - eps && r <= 1.0 + eps) ++ok;
    }
    worst[t] = w;
    return static_cast<double>(ok) / static_cast<double>(pairs.size());
  });
  CompensatedSum sum;
  for (std::size_t t = 0; t < trials; ++t) {
    sum.add(rep.ok_fraction[t]);
    if (rep.ok_fraction[t] == 1.0) ++rep.trials_all_ok;
    rep.worst_distortion = std::max(rep.worst_distortion, worst[t]);
  }
  rep.mean_ok_fraction = trials ? sum.value() / static_cast<double>(trials) : 0.0;
  return rep;
}

enum class RipMethod { Exhaustive, RandomizedSupports };

inline std::string_view to_string(RipMethod m) {
  return m == RipMethod::Exhaustive ? "exhaustive" : "randomized_supports";
}

/// delta_s = max over |S| = s of ‖A_S^T A_S / m - I‖_op (squared form);
/// delta_s_unsquared = max over supports of max |sigma_i(A_S) / sqrt(m) - 1|.
/// Both are reported because the two normalizations differ by
/// (1 + d)^2 - 1 vs d.
struct RIPReport {
  std::size_t s = 0;
  double delta_s = 0.0;
  double delta_s_unsquared = 0.0;
  RipMethod method = RipMethod::Exhaustive;
  std::size_t supports_checked = 0;
  std::optional<std::size_t> m_formula;
};

inline constexpr std::size_t kRipExhaustiveBudget = 1000000;
inline constexpr std::size_t kRipFallbackSupports = 100000;

inline double binomial_double(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  return std::round(std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0)));
}

namespace detail {

// Deviations of one support from the normalized Gram matrix G = A^T A / m.
inline void score_support(const Matrix& gram, const std::vector<std::size_t>& support, RIPReport& rep) {
  const auto s = static_cast<Eigen::Index>(support.size());
  Matrix g(s, s);
  for (Eigen::Index i = 0; i < s; ++i)
    for (Eigen::Index j = 0; j < s; ++j) g(i, j) = gram(support[i], support[j]);
  double lo = 0.0, hi = 0.0;
  if (s == 1) {
    lo = hi = g(0, 0);
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
    lo = es.eigenvalues()(0);
    hi = es.eigenvalues()(s - 1);
  }
  rep.delta_s = std::max({rep.delta_s, std::abs(hi - 1.0), std::abs(lo - 1.0)});
  const double sl = std::sqrt(std::max(lo, 0.0));
  const double sh = std::sqrt(std::max(hi, 0.0));
  rep.delta_s_unsquared = std::max({rep.delta_s_unsquared, std::abs(sh - 1.0), std::abs(sl - 1.0)});
  ++rep.supports_checked;
}

inline void check_rip_args(const Matrix& a, std::size_t s) {
  if (s == 0 || s > static_cast<std::size_t>(a.cols()))
    throw std::invalid_argument("sparsity must lie in [1, n], got " + std::to_string(s));
  if (a.rows() == 0) throw std::invalid_argument("matrix has no rows");
}

}  // namespace detail

// Lower bound on delta_s from `supports` uniformly random supports.
inline RIPReport rip_constant_randomized(const Matrix& a, std::size_t s, std::size_t supports,
                                         const RandomStream& stream) {
  detail::check_rip_args(a, s);
  const Matrix gram = a.transpose() * a / static_cast<double>(a.rows());
  const auto n = static_cast<std::size_t>(a.cols());
  RIPReport rep;
  rep.s = s;
  rep.method = RipMethod::RandomizedSupports;
  RandomStream rs = stream;
  std::vector<std::size_t> perm(n);
  std::vector<std::size_t> support(s);
  for (std::size_t k = 0; k < supports; ++k) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = 0; i < s; ++i) std::swap(perm[i], perm[i + rs.below(n - i)]);
    std::copy_n(perm.begin(), s, support.begin());
    std::sort(support.begin(), support.end());
    detail::score_support(gram, support, rep);
  }
  return rep;
}

/// Exact delta_s by enumerating all C(n, s) supports in colex order. Above
/// `budget` supports it falls back to rip_constant_randomized with
/// min(budget, 1e5) supports and says so in `method`.
inline RIPReport rip_constant_exact(const Matrix& a, std::size_t s, std::size_t budget = kRipExhaustiveBudget,
                                    const RandomStream& fallback = RandomStream(0)) {
  detail::check_rip_args(a, s);
  const auto n = static_cast<std::size_t>(a.cols());
  if (binomial_double(n, s) > static_cast<double>(budget))
    return rip_constant_randomized(a, s, std::min(budget, kRipFallbackSupports), fallback);
  const Matrix gram = a.transpose() * a / static_cast<double>(a.rows());
  RIPReport rep;
  rep.s = s;
  rep.method = RipMethod::Exhaustive;
  std::vector<std::size_t> c(s);
  std::iota(c.begin(), c.end(), std::size_t{0});
  while (true) {
    detail::score_support(gram, c, rep);
    // colex successor: bump the first entry that has room below its right neighbour
    std::size_t i = 0;
    while (i < s && c[i] + 1 == (i + 1 < s ? c[i + 1] : n)) ++i;
    if (i == s) break;
    ++c[i];
    for (std::size_t j = 0; j < i; ++j) c[j] = j;
  }
  return rep;
}

// C delta^-2 K^e ((s log(e n / s))^(1/alpha) + u)^2 before rounding.
inline double rip_sample_size_formula(double delta, double alpha, double K, std::size_t s, std::size_t n, double u,
                                      DesignModel model, double C) {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  if (s == 0 || s > n) throw std::invalid_argument("sparsity must lie in [1, n]");
  if (!(u >= 0.0)) throw std::invalid_argument("u must be non-negative");
  validate_alpha(alpha);
  const double sd = static_cast<double>(s);
  const double w = std::pow(sd * std::log(std::exp(1.0) * static_cast<double>(n) / sd), 1.0 / alpha) + u;
  return C * dimension_K_factor(model, K, alpha) * w * w / (delta * delta);
}

inline std::size_t rip_sample_size(double delta, double alpha, double K, std::size_t s, std::size_t n, double u,
                                   DesignModel model, double C) {
  return static_cast<std::size_t>(std::max(1.0, std::ceil(rip_sample_size_formula(delta, alpha, K, s, n, u, model, C))));
}

}  // namespace htsk
