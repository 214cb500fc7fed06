#pragma once

#include "htsk/linalg.hpp"
#include "htsk/random_stream.hpp"
#include "htsk/tail_distributions.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace htsk {

enum class EnsembleKind { RowModel, ColumnModel, Counterexample, Custom };
enum class ColumnLaw { UniformSphere, NormalizedWeibull };

inline std::string_view to_string(EnsembleKind k) {
  switch (k) {
    case EnsembleKind::RowModel: return "row";
    case EnsembleKind::ColumnModel: return "column";
    case EnsembleKind::Counterexample: return "counterexample";
    case EnsembleKind::Custom: return "custom";
  }
  return "unknown";
}

inline EnsembleKind ensemble_kind_from_string(std::string_view s) {
  for (auto k : {EnsembleKind::RowModel, EnsembleKind::ColumnModel, EnsembleKind::Counterexample,
                 EnsembleKind::Custom})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown ensemble kind: " + std::string(s));
}

inline std::string_view to_string(ColumnLaw c) {
  return c == ColumnLaw::UniformSphere ? "uniform_sphere" : "normalized_weibull";
}

inline ColumnLaw column_law_from_string(std::string_view s) {
  if (s == "uniform_sphere") return ColumnLaw::UniformSphere;
  if (s == "normalized_weibull") return ColumnLaw::NormalizedWeibull;
  throw std::invalid_argument("unknown column law: " + std::string(s));
}

inline constexpr double kMaxMatrixEntries = 1e8;

struct EnsembleSpec;
using CustomGenerator = std::function<Matrix(const EnsembleSpec&, RandomStream)>;

/// Recipe for an m x n random matrix.
///   RowModel:       i.i.d. entries from standardize(entry_law); rows are isotropic.
///   ColumnModel:    independent unit-norm columns (column_law).
///   Counterexample: columns b X, b ~ Bernoulli(1/2), X uniform on sqrt(m) S^(m-1).
///   Custom:         user generator.
/// `nominal_K` is the psi_alpha bound used by every bound-ratio computation.
struct EnsembleSpec {
  EnsembleKind kind = EnsembleKind::RowModel;
  std::size_t m = 1;
  std::size_t n = 1;
  TailLaw entry_law = TailLaw::gaussian();
  ColumnLaw column_law = ColumnLaw::UniformSphere;
  double alpha = 2.0;
  double nominal_K = 1.0;
  CustomGenerator custom;
};

namespace detail {

// log E|V|^q for V the first coordinate of a uniform point on S^(m-1);
// V^2 ~ Beta(1/2, (m-1)/2).
inline double sphere_coordinate_log_moment(std::size_t m, double q) {
  const double md = static_cast<double>(m);
  return std::lgamma(0.5 * (1.0 + q)) + std::lgamma(0.5 * md) - std::lgamma(0.5) - std::lgamma(0.5 * (md + q));
}

}  // namespace detail

// Exact psi_alpha norm of <A_i, x> for a unit vector x and A_i uniform on the
// unit sphere in R^m (rotation invariance makes it independent of x).
inline double uniform_sphere_column_K(std::size_t m, double alpha) {
  return psi_norm_moment_series([m](double q) { return detail::sphere_coordinate_log_moment(m, q); }, alpha)
      .value;
}

// Exact psi_alpha norm of <b X, x> for the counterexample column.
inline double counterexample_column_K(std::size_t m, double alpha) {
  const double md = static_cast<double>(m);
  return psi_norm_moment_series(
             [m, md](double q) {
               return std::log(0.5) + 0.5 * q * std::log(md) + detail::sphere_coordinate_log_moment(m, q);
             },
             alpha)
      .value;
}

inline void validate(const EnsembleSpec& spec) {
  if (spec.m == 0 || spec.n == 0) throw std::invalid_argument("ensemble dimensions must be positive");
  if (static_cast<double>(spec.m) * static_cast<double>(spec.n) > kMaxMatrixEntries)
    throw std::invalid_argument("ensemble exceeds 1e8 entries");
  validate_alpha(spec.alpha);
  if (!(spec.nominal_K > 0.0)) throw std::invalid_argument("nominal K must be positive");
  if (spec.kind == EnsembleKind::Custom && !spec.custom)
    throw std::invalid_argument("custom ensemble needs a generator");
}

inline EnsembleSpec row_model(std::size_t m, std::size_t n, const TailLaw& law) {
  EnsembleSpec spec;
  spec.kind = EnsembleKind::RowModel;
  spec.m = m;
  spec.n = n;
  spec.entry_law = law;
  spec.alpha = law.alpha();
  // psi norm of one standardized coordinate; the row norm sup_x ||<row, x>||
  // is bounded below by it and matches it for Gaussian rows.
  spec.nominal_K = psi_norm(standardize(law)).value;
  validate(spec);
  return spec;
}

// For NormalizedWeibull there is no closed form for K; pass the calibrated
// value (see calibration.hpp).
inline EnsembleSpec column_model(std::size_t m, std::size_t n, ColumnLaw law, double alpha,
                                 std::optional<double> nominal_K = std::nullopt) {
  EnsembleSpec spec;
  spec.kind = EnsembleKind::ColumnModel;
  spec.m = m;
  spec.n = n;
  spec.column_law = law;
  spec.alpha = alpha;
  validate_alpha(alpha);
  if (nominal_K) {
    spec.nominal_K = *nominal_K;
  } else if (law == ColumnLaw::UniformSphere) {
    spec.nominal_K = uniform_sphere_column_K(m, alpha);
  } else {
    throw std::invalid_argument("normalized_weibull column law needs a calibrated K");
  }
  validate(spec);
  return spec;
}

inline EnsembleSpec counterexample_model(std::size_t m, std::size_t n) {
  EnsembleSpec spec;
  spec.kind = EnsembleKind::Counterexample;
  spec.m = m;
  spec.n = n;
  spec.alpha = 2.0;
  spec.nominal_K = counterexample_column_K(m, 2.0);
  validate(spec);
  return spec;
}

inline EnsembleSpec custom_model(std::size_t m, std::size_t n, double alpha, double nominal_K,
                                 CustomGenerator gen) {
  EnsembleSpec spec;
  spec.kind = EnsembleKind::Custom;
  spec.m = m;
  spec.n = n;
  spec.alpha = alpha;
  spec.nominal_K = nominal_K;
  spec.custom = std::move(gen);
  validate(spec);
  return spec;
}

// Column j of every generator draws from stream.substream(j).
inline Matrix gen_row_model(const EnsembleSpec& spec, const RandomStream& stream) {
  if (spec.kind != EnsembleKind::RowModel) throw std::invalid_argument("gen_row_model needs a row-model spec");
  validate(spec);
  const TailLaw law = standardize(spec.entry_law);
  Matrix a(spec.m, spec.n);
  for (std::size_t j = 0; j < spec.n; ++j) {
    RandomStream col = stream.substream(j);
    for (std::size_t i = 0; i < spec.m; ++i) a(i, j) = sample(law, col);
  }
  return a;
}

inline Matrix gen_column_model(const EnsembleSpec& spec, const RandomStream& stream,
                               std::size_t* retries = nullptr) {
  if (spec.kind != EnsembleKind::ColumnModel)
    throw std::invalid_argument("gen_column_model needs a column-model spec");
  validate(spec);
  const TailLaw weibull = TailLaw::symmetric_weibull(spec.alpha);
  Matrix a(spec.m, spec.n);
  std::size_t redraws = 0;
  for (std::size_t j = 0; j < spec.n; ++j) {
    RandomStream col = stream.substream(j);
    Vector w(spec.m);
    double norm = 0.0;
    while (true) {
      for (std::size_t i = 0; i < spec.m; ++i)
        w(i) = spec.column_law == ColumnLaw::UniformSphere ? col.normal() : sample(weibull, col);
      norm = w.norm();
      if (norm > 0.0 && std::isfinite(norm)) break;
      ++redraws;
    }
    a.col(j) = w / norm;
  }
  if (retries) *retries = redraws;
  return a;
}

inline Matrix gen_counterexample(std::size_t m, std::size_t count, const RandomStream& stream) {
  if (m == 0) throw std::invalid_argument("counterexample needs m >= 1");
  const double radius = std::sqrt(static_cast<double>(m));
  Matrix a = Matrix::Zero(m, count);
  for (std::size_t j = 0; j < count; ++j) {
    RandomStream col = stream.substream(j);
    if (!col.coin()) continue;
    Vector w(m);
    double norm = 0.0;
    do {
      for (std::size_t i = 0; i < m; ++i) w(i) = col.normal();
      norm = w.norm();
    } while (norm == 0.0);
    a.col(j) = (radius / norm) * w;
  }
  return a;
}

inline Matrix generate(const EnsembleSpec& spec, const RandomStream& stream) {
  switch (spec.kind) {
    case EnsembleKind::RowModel: return gen_row_model(spec, stream);
    case EnsembleKind::ColumnModel: return gen_column_model(spec, stream);
    case EnsembleKind::Counterexample:
      validate(spec);
      return gen_counterexample(spec.m, spec.n, stream);
    case EnsembleKind::Custom:
      validate(spec);
      return spec.custom(spec, stream);
  }
  throw std::invalid_argument("unknown ensemble kind");
}

struct NormalizationOutcome {
  Matrix matrix;
  bool event_F = false;
  double min_column_norm = 0.0;
};

// Rescales every column to norm sqrt(m) on the event
// F = {min_i ||A_i||_2 >= sqrt(m)/2}. Off F the input comes back unchanged and
// flagged; callers discard such trials.
inline NormalizationOutcome normalize_columns(const Matrix& a) {
  NormalizationOutcome out;
  const double target = std::sqrt(static_cast<double>(a.rows()));
  out.min_column_norm = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < a.cols(); ++j) out.min_column_norm = std::min(out.min_column_norm, a.col(j).norm());
  if (a.cols() == 0) out.min_column_norm = 0.0;
  out.event_F = a.cols() > 0 && out.min_column_norm >= 0.5 * target;
  out.matrix = a;
  if (!out.event_F) return out;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const double norm = a.col(j).norm();
    if (!(norm > 0.0)) throw std::logic_error("zero column on event F");
    out.matrix.col(j) *= target / norm;
  }
  return out;
}

}  // namespace htsk
