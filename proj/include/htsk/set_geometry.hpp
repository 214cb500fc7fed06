#pragma once

#include "htsk/linalg.hpp"
#include "htsk/random_stream.hpp"
#include "htsk/tail_distributions.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace htsk {

enum class SetKind { FinitePoints, UnitSphere, SparseSphere, Ball };

inline std::string_view to_string(SetKind k) {
  switch (k) {
    case SetKind::FinitePoints: return "finite";
    case SetKind::UnitSphere: return "sphere";
    case SetKind::SparseSphere: return "sparse";
    case SetKind::Ball: return "ball";
  }
  return "unknown";
}

inline SetKind set_kind_from_string(std::string_view s) {
  for (auto k : {SetKind::FinitePoints, SetKind::UnitSphere, SetKind::SparseSphere, SetKind::Ball})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown set kind: " + std::string(s));
}

/// Index set T in R^n. FinitePoints stores its points as the columns of an
/// n x N matrix; SparseSphere is the set of s-sparse unit vectors.
struct SetDescriptor {
  SetKind kind = SetKind::UnitSphere;
  std::size_t n = 1;
  std::size_t s = 0;
  double r = 1.0;
  Matrix points;

  static SetDescriptor finite(Matrix pts) {
    SetDescriptor d;
    d.kind = SetKind::FinitePoints;
    d.n = static_cast<std::size_t>(pts.rows());
    d.points = std::move(pts);
    return d;
  }
  static SetDescriptor unit_sphere(std::size_t n) {
    SetDescriptor d;
    d.kind = SetKind::UnitSphere;
    d.n = n;
    return d;
  }
  static SetDescriptor sparse_sphere(std::size_t n, std::size_t s) {
    SetDescriptor d;
    d.kind = SetKind::SparseSphere;
    d.n = n;
    d.s = s;
    return d;
  }
  static SetDescriptor ball(std::size_t n, double r) {
    SetDescriptor d;
    d.kind = SetKind::Ball;
    d.n = n;
    d.r = r;
    return d;
  }
};

inline void validate(const SetDescriptor& t) {
  if (t.n == 0) throw std::invalid_argument("set dimension must be positive");
  switch (t.kind) {
    case SetKind::FinitePoints:
      if (t.points.cols() == 0) throw std::invalid_argument("finite set must be nonempty");
      if (!t.points.allFinite()) throw std::invalid_argument("finite set points must be finite");
      break;
    case SetKind::SparseSphere:
      if (t.s < 1 || t.s > t.n) throw std::invalid_argument("sparse sphere needs 1 <= s <= n");
      break;
    case SetKind::Ball:
      if (!(t.r > 0.0) || !std::isfinite(t.r)) throw std::invalid_argument("ball radius must be positive");
      break;
    case SetKind::UnitSphere: break;
  }
}

inline double radius(const SetDescriptor& t) {
  validate(t);
  switch (t.kind) {
    case SetKind::FinitePoints: return t.points.colwise().norm().maxCoeff();
    case SetKind::UnitSphere:
    case SetKind::SparseSphere: return 1.0;
    case SetKind::Ball: return t.r;
  }
  return 0.0;
}

inline Matrix pairwise_distances(const Matrix& pts) {
  const Eigen::Index n = pts.cols();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < j; ++i) d(i, j) = d(j, i) = (pts.col(i) - pts.col(j)).norm();
  return d;
}

inline double diameter(const Matrix& pts) { return pts.cols() ? pairwise_distances(pts).maxCoeff() : 0.0; }

inline constexpr std::size_t kExactCoverLimit = 16;

struct CoveringCount {
  std::size_t count = 0;
  // When false, count is a greedy maximal u-separated set:
  // N(T, u) <= count <= N(T, u/2).
  bool exact = true;
};

namespace detail {

// Minimal number of closed u-balls centered at points of T, by breadth-first
// search over covered subsets (|T| <= 16).
inline std::size_t exact_cover(const Matrix& dist, double u) {
  const auto n = static_cast<std::size_t>(dist.cols());
  if (n == 0) return 0;
  const std::uint32_t full = (n == 32) ? 0xffffffffu : ((1u << n) - 1u);
  std::vector<std::uint32_t> masks(n, 0);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t p = 0; p < n; ++p)
      if (dist(c, p) <= u) masks[c] |= 1u << p;
  std::vector<std::uint8_t> seen(std::size_t{1} << n, 0);
  std::vector<std::uint32_t> frontier{0};
  seen[0] = 1;
  for (std::size_t depth = 1; depth <= n; ++depth) {
    std::vector<std::uint32_t> next;
    for (auto cov : frontier) {
      // Some ball must cover the lowest uncovered point.
      std::size_t p = 0;
      while (cov & (1u << p)) ++p;
      for (std::size_t c = 0; c < n; ++c) {
        if (!(masks[c] & (1u << p))) continue;
        const std::uint32_t nc = cov | masks[c];
        if (nc == full) return depth;
        if (!seen[nc]) {
          seen[nc] = 1;
          next.push_back(nc);
        }
      }
    }
    frontier = std::move(next);
  }
  return n;
}

// Greedy maximal u-separated subset in index order; it is also a u-cover.
inline std::size_t greedy_separated(const Matrix& pts, double u) {
  std::vector<Eigen::Index> centers;
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    bool covered = false;
    for (auto c : centers)
      if ((pts.col(i) - pts.col(c)).norm() <= u) {
        covered = true;
        break;
      }
    if (!covered) centers.push_back(i);
  }
  return centers.size();
}

}  // namespace detail

inline CoveringCount covering_number_finite(const Matrix& pts, double u) {
  if (!(u > 0.0)) throw std::invalid_argument("covering radius must be positive");
  if (pts.cols() == 0) throw std::invalid_argument("finite set must be nonempty");
  if (static_cast<std::size_t>(pts.cols()) <= kExactCoverLimit)
    return {detail::exact_cover(pairwise_distances(pts), u), true};
  return {detail::greedy_separated(pts, u), false};
}

struct LogBound {
  double log_value = 0.0;
  double value = 0.0;  // exp(log_value); +inf on overflow
};

// Volumetric bound N(Sigma_s^{2n} cap S^{n-1}, u) <= (2 e n / s)^s (1 + 2/u)^s.
inline LogBound covering_bound_sparse(std::size_t n, std::size_t s, double u) {
  if (s < 1 || s > n) throw std::invalid_argument("covering bound needs 1 <= s <= n");
  if (!(u > 0.0)) throw std::invalid_argument("covering radius must be positive");
  const double sd = static_cast<double>(s);
  const double nd = static_cast<double>(n);
  LogBound b;
  b.log_value = sd * std::log(2.0 * std::numbers::e * nd / sd) + sd * std::log1p(2.0 / u);
  b.value = std::exp(b.log_value);
  return b;
}

// Upper bound on log N(T, u) for the infinite sets (arbitrary centers).
inline double log_covering_upper(const SetDescriptor& t, double u) {
  const double nd = static_cast<double>(t.n);
  switch (t.kind) {
    case SetKind::UnitSphere: return u >= 1.0 ? 0.0 : nd * std::log1p(2.0 / u);
    case SetKind::SparseSphere: return u >= 1.0 ? 0.0 : covering_bound_sparse(t.n, t.s, u).log_value;
    case SetKind::Ball: return u >= t.r ? 0.0 : nd * std::log1p(2.0 * t.r / u);
    case SetKind::FinitePoints:
      return std::log(static_cast<double>(covering_number_finite(t.points, u).count));
  }
  return 0.0;
}

// Constant turning the entropy integral into a bound on gamma_alpha with the
// diameter convention. Nested nets of sizes 2^(2^k) at radii e_k give an
// admissible sequence with gamma <= diam + 2^(1 + 1/alpha) sum_k 2^(k/alpha) e_k,
// and log N(u) > 2^k ln 2 below e_k bounds that sum by the integral.
inline double dudley_constant(double alpha) {
  validate_alpha(alpha);
  const double q = std::pow(2.0, -1.0 / alpha);
  return 2.0 * std::pow(2.0, 1.0 / alpha) / ((1.0 - q) * std::pow(std::numbers::ln2, 1.0 / alpha));
}

enum class DudleyMethod { ExactSteps, UpperRiemann, Trapezoid };

inline std::string_view to_string(DudleyMethod m) {
  switch (m) {
    case DudleyMethod::ExactSteps: return "exact-steps";
    case DudleyMethod::UpperRiemann: return "upper-riemann";
    case DudleyMethod::Trapezoid: return "trapezoid";
  }
  return "unknown";
}

struct DudleyBound {
  double integral = 0.0;  // int_0^inf (log N(T,u))^(1/alpha) du, constant 1
  double constant = 1.0;  // dudley_constant(alpha)
  double gamma_upper = 0.0;
  DudleyMethod method = DudleyMethod::ExactSteps;
  std::size_t shells = 0;
};

/// Entropy-integral upper bound on gamma_alpha(T).
///
/// Finite sets with at most 16 points integrate the exact step function
/// log N(T, u), which only changes at pairwise distances. Larger finite sets
/// use dyadic shells below the diameter with greedy (upper) covering counts
/// evaluated at the inner shell edge, which over-estimates the integral.
/// Spheres and balls use volumetric bounds on dyadic shells u = R 2^-j with
/// the trapezoid rule, stopping once the remaining tail u_J f(u_J) is below
/// 1e-3 of the total.
inline DudleyBound dudley_gamma_upper(const SetDescriptor& t, double alpha) {
  validate(t);
  validate_alpha(alpha);
  DudleyBound out;
  out.constant = dudley_constant(alpha);
  auto f = [alpha](double log_n) { return log_n <= 0.0 ? 0.0 : std::pow(log_n, 1.0 / alpha); };

  if (t.kind == SetKind::FinitePoints) {
    const Matrix dist = pairwise_distances(t.points);
    const auto npts = static_cast<std::size_t>(t.points.cols());
    if (npts <= kExactCoverLimit) {
      out.method = DudleyMethod::ExactSteps;
      std::vector<double> breaks(dist.data(), dist.data() + dist.size());
      breaks.push_back(0.0);
      std::sort(breaks.begin(), breaks.end());
      breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
      CompensatedSum sum;
      for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
        const double log_n = std::log(static_cast<double>(detail::exact_cover(dist, breaks[k])));
        sum.add((breaks[k + 1] - breaks[k]) * f(log_n));
        ++out.shells;
      }
      out.integral = sum.value();
    } else {
      out.method = DudleyMethod::UpperRiemann;
      double min_pos = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < dist.size(); ++i)
        if (dist.data()[i] > 0.0) min_pos = std::min(min_pos, dist.data()[i]);
      const double diam = dist.maxCoeff();
      CompensatedSum sum;
      if (diam > 0.0) {
        double hi = diam;
        while (hi > min_pos) {
          const double lo = std::max(0.5 * hi, min_pos);
          sum.add((hi - lo) * f(std::log(static_cast<double>(detail::greedy_separated(t.points, lo)))));
          ++out.shells;
          hi = lo;
        }
        // Below the smallest positive distance every distinct point needs its own ball.
        const double distinct = static_cast<double>(detail::greedy_separated(t.points, 0.5 * min_pos));
        sum.add(min_pos * f(std::log(distinct)));
      }
      out.integral = sum.value();
    }
  } else {
    out.method = DudleyMethod::Trapezoid;
    const double top = t.kind == SetKind::Ball ? t.r : 1.0;
    CompensatedSum sum;
    double hi = top;
    double f_hi = f(log_covering_upper(t, hi));
    for (std::size_t j = 0; j < 200; ++j) {
      const double lo = 0.5 * hi;
      const double f_lo = f(log_covering_upper(t, lo));
      sum.add(0.5 * (hi - lo) * (f_hi + f_lo));
      ++out.shells;
      hi = lo;
      f_hi = f_lo;
      if (hi * f_hi < 1e-3 * sum.value()) break;
    }
    sum.add(hi * f_hi);
    out.integral = sum.value();
  }
  out.gamma_upper = out.constant * out.integral;
  return out;
}

enum class BlockSize { Diameter, Radius };

inline std::string_view to_string(BlockSize b) { return b == BlockSize::Diameter ? "diameter" : "radius"; }

enum class BracketMethod { EntropyNumber, ExactPartition, DudleyIntegral };

inline std::string_view to_string(BracketMethod m) {
  switch (m) {
    case BracketMethod::EntropyNumber: return "entropy-number";
    case BracketMethod::ExactPartition: return "exact-partition";
    case BracketMethod::DudleyIntegral: return "dudley-integral";
  }
  return "unknown";
}

struct ComplexityBracket {
  double gamma_lower = 0.0;
  double gamma_upper = 0.0;
  double alpha = 2.0;
  BracketMethod method_lower = BracketMethod::EntropyNumber;
  BracketMethod method_upper = BracketMethod::DudleyIntegral;
  BlockSize block_size = BlockSize::Diameter;
  double dudley_integral = 0.0;
  double dudley_constant = 1.0;
};

inline constexpr std::size_t kExactGammaLimit = 8;

namespace detail {

// Diameter, or the radius min_{c in B} max_{p in B} d(c, p) about a member.
inline double block_size(const Matrix& dist, const std::vector<int>& members, BlockSize conv) {
  double best = conv == BlockSize::Diameter ? 0.0 : std::numeric_limits<double>::infinity();
  for (int c : members) {
    double far = 0.0;
    for (int p : members) far = std::max(far, dist(c, p));
    best = conv == BlockSize::Diameter ? std::max(best, far) : std::min(best, far);
  }
  return members.empty() ? 0.0 : best;
}

}  // namespace detail

/// Exact gamma_alpha of a set with at most 8 points.
///
/// A_0 = {T}. Any admissible A_2 may be taken to be all singletons (16 >= |T|
/// blocks allowed), which zeroes every later term, so the functional reduces
/// to size(T) + 2^(1/alpha) min over partitions A_1 with <= 4 blocks of the
/// largest block size. Partitions are enumerated as restricted growth strings.
inline ComplexityBracket gamma_exact_small(const Matrix& pts, double alpha, BlockSize conv = BlockSize::Diameter) {
  validate_alpha(alpha);
  const auto n = static_cast<int>(pts.cols());
  if (n == 0) throw std::invalid_argument("finite set must be nonempty");
  if (static_cast<std::size_t>(n) > kExactGammaLimit)
    throw std::invalid_argument("exact gamma supports at most 8 points");
  const Matrix dist = pairwise_distances(pts);
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  const double top = detail::block_size(dist, all, conv);

  double best_level1 = std::numeric_limits<double>::infinity();
  std::vector<int> label(n, 0);
  std::vector<std::vector<int>> blocks;
  // Restricted growth strings: label[i] <= max(label[0..i-1]) + 1, at most 4 labels.
  auto visit = [&](auto&& self, int i, int used) -> void {
    if (i == n) {
      blocks.assign(used, {});
      for (int p = 0; p < n; ++p) blocks[label[p]].push_back(p);
      double worst = 0.0;
      for (const auto& b : blocks) worst = std::max(worst, detail::block_size(dist, b, conv));
      best_level1 = std::min(best_level1, worst);
      return;
    }
    for (int l = 0; l <= std::min(used, 3); ++l) {
      label[i] = l;
      self(self, i + 1, std::max(used, l + 1));
    }
  };
  visit(visit, 0, 0);

  ComplexityBracket b;
  b.alpha = alpha;
  b.gamma_lower = b.gamma_upper = top + std::pow(2.0, 1.0 / alpha) * best_level1;
  b.method_lower = b.method_upper = BracketMethod::ExactPartition;
  b.block_size = conv;
  return b;
}

namespace detail {

// Farthest-first traversal: minimum pairwise distance among the first `count`
// selected points (0 when fewer points exist).
inline double farthest_first_separation(const Matrix& pts, std::size_t count) {
  const auto n = static_cast<std::size_t>(pts.cols());
  if (count < 2 || count > n) return 0.0;
  std::vector<double> to_set(n, std::numeric_limits<double>::infinity());
  std::size_t current = 0;
  double separation = std::numeric_limits<double>::infinity();
  for (std::size_t picked = 1; picked < count; ++picked) {
    for (std::size_t i = 0; i < n; ++i)
      to_set[i] = std::min(to_set[i], (pts.col(static_cast<Eigen::Index>(i)) -
                                       pts.col(static_cast<Eigen::Index>(current))).norm());
    current = static_cast<std::size_t>(std::max_element(to_set.begin(), to_set.end()) - to_set.begin());
    separation = std::min(separation, to_set[current]);
  }
  return separation;
}

}  // namespace detail

/// Lower bound sup_k 2^(k/alpha) e_k(T), e_k(T) = inf{u : N(T, u) <= 2^(2^k)},
/// together with the level-0 term diam(T). Every admissible A_k yields a
/// cover by 2^(2^k) balls of radius max_block diam(A_k), so each term is at
/// most gamma_alpha(T) in the diameter convention.
///
/// e_k is exact for finite sets of at most 16 points; otherwise it is bounded
/// below by half the separation of 2^(2^k) + 1 points (two of them share a
/// ball). Spheres use the 2n points +-e_i (separation sqrt 2); balls use the
/// volume bound N(rB, u) >= (r/u)^n.
inline double entropy_lower_bound(const SetDescriptor& t, double alpha) {
  validate(t);
  validate_alpha(alpha);
  auto weight = [alpha](int k) { return std::pow(2.0, static_cast<double>(k) / alpha); };
  auto level_size = [](int k) { return std::exp2(std::exp2(k)); };  // 2^(2^k), inf past k = 9
  double best = 0.0;
  switch (t.kind) {
    case SetKind::FinitePoints: {
      const Matrix dist = pairwise_distances(t.points);
      const auto npts = static_cast<std::size_t>(t.points.cols());
      best = dist.maxCoeff();
      if (npts <= kExactCoverLimit) {
        std::vector<double> radii(dist.data(), dist.data() + dist.size());
        std::sort(radii.begin(), radii.end());
        radii.erase(std::unique(radii.begin(), radii.end()), radii.end());
        for (int k = 0; k < 5 && level_size(k) < static_cast<double>(npts); ++k) {
          double e_k = radii.back();
          for (double u : radii)
            if (static_cast<double>(detail::exact_cover(dist, u)) <= level_size(k)) {
              e_k = u;
              break;
            }
          best = std::max(best, weight(k) * e_k);
        }
      } else {
        for (int k = 0; k < 5 && level_size(k) + 1.0 <= static_cast<double>(npts); ++k) {
          const auto need = static_cast<std::size_t>(level_size(k)) + 1;
          best = std::max(best, weight(k) * 0.5 * detail::farthest_first_separation(t.points, need));
        }
      }
      break;
    }
    case SetKind::UnitSphere:
    case SetKind::SparseSphere: {
      const double pts = 2.0 * static_cast<double>(t.n);
      best = 2.0;
      const double sep = t.n >= 2 ? std::numbers::sqrt2 : 2.0;
      for (int k = 0; k < 6 && level_size(k) + 1.0 <= pts; ++k) best = std::max(best, weight(k) * 0.5 * sep);
      break;
    }
    case SetKind::Ball: {
      best = 2.0 * t.r;
      const double nd = static_cast<double>(t.n);
      for (int k = 0; k < 40; ++k) best = std::max(best, weight(k) * t.r * std::pow(2.0, -level_size(k) / nd));
      break;
    }
  }
  return best;
}

// Lower and upper estimates of gamma_alpha(T); exact for finite sets of at most 8 points.
inline ComplexityBracket complexity_bracket(const SetDescriptor& t, double alpha) {
  validate(t);
  const auto dudley = dudley_gamma_upper(t, alpha);
  ComplexityBracket b;
  if (t.kind == SetKind::FinitePoints && static_cast<std::size_t>(t.points.cols()) <= kExactGammaLimit) {
    b = gamma_exact_small(t.points, alpha);
  } else {
    b.alpha = alpha;
    b.gamma_lower = entropy_lower_bound(t, alpha);
    b.gamma_upper = dudley.gamma_upper;
    b.method_lower = BracketMethod::EntropyNumber;
    b.method_upper = BracketMethod::DudleyIntegral;
  }
  b.dudley_integral = dudley.integral;
  b.dudley_constant = dudley.constant;
  return b;
}

// Random finite approximation of T: spheres use normalized Gaussians, sparse
// spheres a uniform support with normalized Gaussian values, balls a uniform
// direction with radius r U^(1/n). Finite sets return their points.
inline Matrix sample_net(const SetDescriptor& t, std::size_t count, const RandomStream& stream) {
  validate(t);
  if (t.kind == SetKind::FinitePoints) return t.points;
  Matrix pts = Matrix::Zero(t.n, count);
  for (std::size_t j = 0; j < count; ++j) {
    RandomStream rs = stream.substream(j);
    Vector v = Vector::Zero(t.n);
    do {
      if (t.kind == SetKind::SparseSphere) {
        std::vector<std::size_t> idx(t.n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < t.s; ++i) {
          std::swap(idx[i], idx[i + rs.below(t.n - i)]);
          v(idx[i]) = rs.normal();
        }
      } else {
        for (std::size_t i = 0; i < t.n; ++i) v(i) = rs.normal();
      }
    } while (v.norm() == 0.0);
    v.normalize();
    if (t.kind == SetKind::Ball) v *= t.r * std::pow(rs.uniform(), 1.0 / static_cast<double>(t.n));
    pts.col(j) = v;
  }
  return pts;
}

// Sampled estimate of the net resolution sup_{x in T} min_j ||x - p_j||:
// the maximum over `probes` random members of T. A lower estimate.
inline double estimate_net_resolution(const SetDescriptor& t, const Matrix& net, std::size_t probes,
                                      const RandomStream& stream) {
  if (t.kind == SetKind::FinitePoints) return 0.0;
  const Matrix probe = sample_net(t, probes, stream);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < probe.cols(); ++j)
    worst = std::max(worst, (net.colwise() - probe.col(j)).colwise().norm().minCoeff());
  return worst;
}

}  // namespace htsk
