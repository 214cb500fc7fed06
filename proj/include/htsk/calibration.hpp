#pragma once

#include "htsk/applications.hpp"
#include "htsk/concentration_lab.hpp"
#include "htsk/ensembles.hpp"
#include "htsk/json_io.hpp"
#include "htsk/set_geometry.hpp"
#include "htsk/tail_distributions.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef HTSK_CALIBRATION_FILE
#define HTSK_CALIBRATION_FILE "data/calibration.json"
#endif

namespace htsk {

inline constexpr int kCalibrationVersion = 1;
inline constexpr double kCalibrationQuantile = 0.99;
inline constexpr double kCalibrationInflation = 1.5;
inline constexpr std::uint64_t kCalibrationSeed = 20240601;

inline std::string alpha_key(double alpha) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", alpha);
  return buf;
}

/// Frozen constants keyed by name and alpha. Every bound with an unnamed
/// constant reads it from here.
struct Calibration {
  int version = kCalibrationVersion;
  std::uint64_t seed = kCalibrationSeed;
  std::map<std::string, std::map<std::string, double>> constants;

  bool has(const std::string& name, double alpha) const {
    auto it = constants.find(name);
    return it != constants.end() && it->second.count(alpha_key(alpha));
  }

  double get(const std::string& name, double alpha) const {
    auto it = constants.find(name);
    if (it != constants.end()) {
      auto jt = it->second.find(alpha_key(alpha));
      if (jt != it->second.end()) return jt->second;
    }
    throw std::invalid_argument("no calibrated constant '" + name + "' at alpha " + alpha_key(alpha));
  }

  void set(const std::string& name, double alpha, double value) { constants[name][alpha_key(alpha)] = value; }
};

inline json to_json(const Calibration& c) {
  json consts = json::object();
  for (const auto& [name, per_alpha] : c.constants)
    for (const auto& [a, v] : per_alpha) consts[name][a] = v;
  return {{"version", c.version},
          {"seed", c.seed},
          {"protocol", "99th percentile of implied constants at the smallest scale, times 1.5"},
          {"constants", consts}};
}

inline Calibration calibration_from_json(const json& j) {
  require_keys(j, {"version", "seed", "protocol", "constants"}, "calibration");
  Calibration c;
  c.version = get_field<int>(j, "version", "calibration");
  if (c.version != kCalibrationVersion)
    throw SchemaError("unsupported calibration version " + std::to_string(c.version));
  if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j, "seed", "calibration");
  for (auto it = j.at("constants").begin(); it != j.at("constants").end(); ++it)
    for (auto jt = it.value().begin(); jt != it.value().end(); ++jt) c.constants[it.key()][jt.key()] = jt.value().get<double>();
  return c;
}

// HTSK_CALIBRATION wins over the compiled-in default.
inline std::string default_calibration_path() {
  if (const char* env = std::getenv("HTSK_CALIBRATION"); env && *env) return env;
  return HTSK_CALIBRATION_FILE;
}

inline Calibration load_calibration(const std::string& path = default_calibration_path()) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open calibration file " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw SchemaError("calibration file " + path + " is not valid JSON: " + e.what());
  }
  return calibration_from_json(j);
}

inline void save_calibration(const Calibration& c, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write calibration file " + path);
  os << dump_json(to_json(c));
}

// Linear-interpolation quantile (type 7).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double freeze_constant(const std::vector<double>& implied) {
  return kCalibrationInflation * quantile(implied, kCalibrationQuantile);
}

// psi_alpha norm of <A_i, x> for a column law scaled to norm sqrt(m); does not
// depend on m for NormalizedWeibull (calibrated) and is bounded by the
// Gaussian value for UniformSphere.
inline double column_K_lambda(ColumnLaw law, double alpha, const Calibration& cal) {
  if (law == ColumnLaw::NormalizedWeibull) return cal.get("normalized_weibull_K", alpha);
  return psi_norm(TailLaw::gaussian(1.0, alpha)).value;
}

// Column-model spec with nominal K for unit columns: exact for UniformSphere,
// calibrated c / sqrt(m) for NormalizedWeibull.
inline EnsembleSpec calibrated_column_model(std::size_t m, std::size_t n, ColumnLaw law, double alpha,
                                            const Calibration& cal) {
  if (law == ColumnLaw::UniformSphere) return column_model(m, n, law, alpha);
  return column_model(m, n, law, alpha, cal.get("normalized_weibull_K", alpha) / std::sqrt(static_cast<double>(m)));
}

// Column law used by the calibration configs at each alpha.
inline ColumnLaw default_column_law(double alpha) {
  return alpha == 2.0 ? ColumnLaw::UniformSphere : ColumnLaw::NormalizedWeibull;
}

inline TailLaw standardized_weibull(double alpha) { return standardize(TailLaw::symmetric_weibull(alpha)); }

namespace calibration_runs {

using Log = std::function<void(const std::string&)>;

inline std::vector<double> psi_monotone(const RandomStream& rs) {
  std::vector<double> out;
  const auto law = TailLaw::symmetric_weibull(2.0);
  for (std::uint64_t r = 0; r < 20; ++r) {
    RandomStream s = rs.substream(r);
    const auto x = sample_n(law, s, kMinPsiSamples);
    out.push_back(psi_norm_bisection(x, 1.0).value / psi_norm_bisection(x, 2.0).value);
  }
  return out;
}

// sqrt(m) times the psi norm of a projected coordinate, m = 50.
inline std::vector<double> normalized_weibull_K(double alpha, const RandomStream& rs) {
  constexpr std::size_t m = 50, draws = 20000;
  const auto spec = column_model(m, 1, ColumnLaw::NormalizedWeibull, alpha, 1.0);
  const Vector u = Vector::Constant(m, 1.0 / std::sqrt(static_cast<double>(m)));
  std::vector<double> out;
  for (std::uint64_t r = 0; r < 10; ++r) {
    std::vector<double> e1(draws), dense(draws);
    const RandomStream base = rs.substream(r);
    for (std::size_t i = 0; i < draws; ++i) {
      const Matrix col = gen_column_model(spec, base.substream(i));
      e1[i] = col(0, 0);
      dense[i] = col.col(0).dot(u);
    }
    const double sm = std::sqrt(static_cast<double>(m));
    out.push_back(sm * psi_norm_bisection(e1, alpha).value);
    out.push_back(sm * psi_norm_bisection(dense, alpha).value);
  }
  return out;
}

inline std::vector<TailLaw> laws_for(double alpha) {
  if (alpha == 2.0) return {TailLaw::gaussian(), standardized_weibull(2.0)};
  return {standardized_weibull(alpha)};
}

inline Matrix fixed_symmetric(std::size_t n, std::uint64_t seed) {
  RandomStream s(seed);
  Matrix a(n, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) a(i, j) = s.normal();
  return symmetrize(a);
}

inline Matrix fixed_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  RandomStream s(seed);
  Matrix a(r, c);
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < r; ++i) a(i, j) = s.normal();
  return a;
}

inline std::vector<Matrix> hanson_wright_matrices() {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 1.0;
  d(1, 1) = -1.0;
  return {d, Matrix::Identity(4, 4), fixed_symmetric(4, 11)};
}

inline std::vector<Matrix> bx_matrices() {
  Vector u(4);
  u << 1.0, 2.0, -1.0, 0.5;
  u.normalize();
  return {Matrix::Identity(4, 4), u * u.transpose(), fixed_matrix(3, 5, 12)};
}

inline constexpr std::size_t kTailTrials = 10000;

inline std::vector<double> hanson_wright(double alpha, const RandomStream& rs, std::size_t workers) {
  std::vector<double> out;
  std::uint64_t k = 0;
  for (const auto& law : laws_for(alpha))
    for (const auto& m : hanson_wright_matrices()) {
      const auto r = hanson_wright_check(law, m, kTailTrials, rs.substream(k++), 1.0, workers);
      out.insert(out.end(), r.implied_constants.begin(), r.implied_constants.end());
    }
  return out;
}

inline std::vector<double> bx_norm(double alpha, const RandomStream& rs, std::size_t workers) {
  std::vector<double> out;
  std::uint64_t k = 0;
  for (const auto& law : laws_for(alpha))
    for (const auto& b : bx_matrices()) {
      const auto r = bx_norm_check(law, b, kTailTrials, rs.substream(k++), 1.0, workers);
      out.insert(out.end(), r.implied_constants.begin(), r.implied_constants.end());
    }
  return out;
}

inline std::vector<double> lemma41(double alpha, const Calibration& cal, const RandomStream& rs,
                                   std::size_t workers) {
  const auto spec = calibrated_column_model(100, 2, default_column_law(alpha), alpha, cal);
  Vector x(2);
  x << 1.0, 1.0;
  x /= std::sqrt(2.0);
  std::vector<double> out;
  for (std::uint64_t r = 0; r < 10; ++r)
    out.push_back(column_single_vector_check(spec, x, kTailTrials, rs.substream(r), workers).value / spec.nominal_K);
  return out;
}

inline std::vector<std::pair<Vector, Vector>> increment_pairs() {
  Vector e1 = Vector::Unit(2, 0), e2 = Vector::Unit(2, 1);
  Vector near = (e1 + 0.01 * e2).normalized();
  return {{e1, e2}, {e1, -e1}, {e1, near}, {e1, 2.0 * e1}};
}

inline std::vector<double> increment(double alpha, const Calibration& cal, const RandomStream& rs,
                                     std::size_t workers) {
  const auto spec = calibrated_column_model(100, 2, default_column_law(alpha), alpha, cal);
  const auto stat = model_statistic(spec);
  std::vector<double> out;
  std::uint64_t k = 0;
  for (std::uint64_t r = 0; r < 3; ++r)
    for (const auto& [x, y] : increment_pairs())
      out.push_back(increment_check(spec, stat, x, y, kTailTrials, rs.substream(k++), workers).value / spec.nominal_K);
  return out;
}

inline std::vector<double> column_expectation(double alpha, const Calibration& cal, const RandomStream& rs,
                                              std::size_t workers) {
  const std::size_t n = 16;
  const Matrix net = sample_net(SetDescriptor::unit_sphere(n), 256, RandomStream(kCalibrationSeed, 16));
  const auto bracket = complexity_bracket(SetDescriptor::finite(net), alpha);
  const auto spec = calibrated_column_model(64, n, default_column_law(alpha), alpha, cal);
  const BoundTerms terms{bracket.gamma_upper, radius(SetDescriptor::finite(net))};
  std::vector<double> out;
  for (std::uint64_t r = 0; r < 5; ++r)
    out.push_back(*mc_expectation(spec, model_statistic(spec), net, 200, rs.substream(r), workers, terms).bound_ratio);
  return out;
}

// Smallest m on the grid 1, 2, ..., then +10% steps with `ok(m)` true.
inline std::size_t scan_m(const std::function<bool(std::size_t)>& ok, std::size_t limit = 100000) {
  for (std::size_t m = 1; m <= limit; m += std::max<std::size_t>(1, m / 10))
    if (ok(m)) return m;
  throw std::runtime_error("calibration scan did not reach its target");
}

inline double failure_fraction(const JLReport& r) { return 1.0 - r.mean_ok_fraction; }

inline constexpr double kJlEps = 0.5;
inline constexpr double kJlDelta = 0.1;
inline constexpr std::size_t kScanTrials = 2000;

inline std::vector<double> jl_row(double alpha, const RandomStream& rs, std::size_t workers) {
  const auto law = standardized_weibull(alpha);
  const double K = psi_norm(law).value;
  Matrix pts = Matrix::Zero(8, 2);
  pts(0, 1) = 1.0;
  const double unit = jl_dim_formula(kJlEps, kJlDelta, alpha, K, DesignModel::Row, 1.0);
  std::vector<double> out;
  for (std::uint64_t r = 0; r < 5; ++r) {
    const auto m = scan_m([&](std::size_t m) {
      const auto rep = jl_embed_and_score(pts, row_model(m, 8, law), kJlEps, kScanTrials, rs.substream(r), workers);
      return failure_fraction(rep) <= kJlDelta;
    });
    out.push_back(static_cast<double>(m) / unit);
  }
  return out;
}

inline std::vector<double> jl_column(double alpha, const Calibration& cal, const RandomStream& rs,
                                     std::size_t workers) {
  const auto law = default_column_law(alpha);
  const double K = column_K_lambda(law, alpha, cal);
  Matrix pts = Matrix::Zero(8, 2);
  pts.col(1) = Vector::Constant(8, 1.0 / std::sqrt(8.0));
  const double unit = jl_dim_formula(kJlEps, kJlDelta, alpha, K, DesignModel::Column, 1.0);
  std::vector<double> out;
  for (std::uint64_t r = 0; r < 5; ++r) {
    const auto m = scan_m([&](std::size_t m) {
      const auto spec = calibrated_column_model(m, 8, law, alpha, cal);
      return failure_fraction(jl_embed_and_score(pts, spec, kJlEps, kScanTrials, rs.substream(r), workers)) <= kJlDelta;
    });
    out.push_back(static_cast<double>(m) / unit);
  }
  return out;
}

inline constexpr double kNormalizationTarget = 0.99;

inline double event_F_probability(const EnsembleSpec& spec, std::size_t trials, const RandomStream& rs,
                                  std::size_t workers) {
  const auto hits = run_trials(trials, rs, workers, [&](std::size_t, const RandomStream& s) {
    return normalize_columns(generate(spec, s)).event_F ? 1.0 : 0.0;
  });
  CompensatedSum sum;
  for (double h : hits) sum.add(h);
  return sum.value() / static_cast<double>(trials);
}

// m / (K^4 (log n)^(2/alpha)).
inline double normalization_unit(double K, std::size_t n, double alpha) {
  return std::pow(K, 4.0) * std::pow(std::log(static_cast<double>(n)), 2.0 / alpha);
}

inline std::vector<double> normalization(double alpha, const RandomStream& rs, std::size_t workers) {
  const auto law = standardized_weibull(alpha);
  const double K = psi_norm(law).value;
  const std::size_t n = 32;
  std::vector<double> out;
  for (std::uint64_t r = 0; r < 5; ++r) {
    const auto m = scan_m([&](std::size_t m) {
      return event_F_probability(row_model(m, n, law), kScanTrials, rs.substream(r), workers) >= kNormalizationTarget;
    });
    out.push_back(static_cast<double>(m) / normalization_unit(K, n, alpha));
  }
  return out;
}

inline constexpr std::size_t kRipN = 12;
inline constexpr std::size_t kRipS = 2;
inline constexpr double kRipDelta = 0.5;
inline constexpr double kRipU = 1.0;
inline constexpr std::size_t kRipTrials = 200;

// Fraction of draws with delta_s <= kRipDelta; column draws are scaled to
// column norm sqrt(m).
inline double rip_success(const EnsembleSpec& spec, std::size_t trials, const RandomStream& rs, std::size_t workers) {
  const double scale = spec.kind == EnsembleKind::ColumnModel ? std::sqrt(static_cast<double>(spec.m)) : 1.0;
  const auto hits = run_trials(trials, rs, workers, [&](std::size_t, const RandomStream& s) {
    return rip_constant_exact(scale * generate(spec, s), kRipS).delta_s <= kRipDelta ? 1.0 : 0.0;
  });
  CompensatedSum sum;
  for (double h : hits) sum.add(h);
  return sum.value() / static_cast<double>(trials);
}

inline std::vector<double> rip(DesignModel model, double alpha, const Calibration& cal, const RandomStream& rs,
                               std::size_t workers) {
  const auto law = standardized_weibull(alpha);
  const double K = model == DesignModel::Row ? psi_norm(law).value : column_K_lambda(default_column_law(alpha), alpha, cal);
  const double unit = rip_sample_size_formula(kRipDelta, alpha, K, kRipS, kRipN, kRipU, model, 1.0);
  const double target = 1.0 - std::exp(-kRipU);
  std::vector<double> out;
  for (std::uint64_t r = 0; r < 3; ++r) {
    const auto m = scan_m([&](std::size_t m) {
      const auto spec = model == DesignModel::Row ? row_model(m, kRipN, law)
                                                  : calibrated_column_model(m, kRipN, default_column_law(alpha), alpha, cal);
      return rip_success(spec, kRipTrials, rs.substream(r), workers) >= target;
    });
    out.push_back(static_cast<double>(m) / unit);
  }
  return out;
}

// Dudley upper bound of the s-sparse sphere over (s log(e n / s))^(1/alpha).
inline std::vector<double> sparse_gamma(double alpha) {
  std::vector<double> out;
  for (std::size_t n : {16, 32, 64})
    for (std::size_t s : {1, 2, 4}) {
      const double w = std::pow(static_cast<double>(s) * std::log(std::exp(1.0) * n / static_cast<double>(s)), 1.0 / alpha);
      out.push_back(dudley_gamma_upper(SetDescriptor::sparse_sphere(n, s), alpha).gamma_upper / w);
    }
  return out;
}

}  // namespace calibration_runs

/// Runs every calibration config at its smallest scale and freezes
/// 1.5 x (99th percentile of the implied constants) per (name, alpha).
/// Config i draws from RandomStream(seed).substream(i).
inline Calibration calibrate(std::uint64_t seed = kCalibrationSeed, std::size_t workers = 1,
                             const calibration_runs::Log& log = {}) {
  namespace cr = calibration_runs;
  Calibration cal;
  cal.seed = seed;
  const RandomStream root(seed);
  std::uint64_t config = 0;
  auto record = [&](const std::string& name, double alpha, const std::vector<double>& implied) {
    cal.set(name, alpha, freeze_constant(implied));
    if (log) log(name + " alpha=" + alpha_key(alpha) + " -> " + format_double(cal.get(name, alpha)));
  };
  record("psi_monotone", 2.0, cr::psi_monotone(root.substream(config++)));
  for (double a : {0.5, 1.0, 2.0}) record("normalized_weibull_K", a, cr::normalized_weibull_K(a, root.substream(config++)));
  for (double a : {0.5, 1.0, 2.0}) record("sparse_gamma", a, cr::sparse_gamma(a));
  for (double a : {1.0, 2.0}) {
    record("hanson_wright", a, cr::hanson_wright(a, root.substream(config++), workers));
    record("bx_norm", a, cr::bx_norm(a, root.substream(config++), workers));
    record("lemma41", a, cr::lemma41(a, cal, root.substream(config++), workers));
    record("increment", a, cr::increment(a, cal, root.substream(config++), workers));
    record("column_expectation", a, cr::column_expectation(a, cal, root.substream(config++), workers));
    record("jl_row", a, cr::jl_row(a, root.substream(config++), workers));
    record("jl_column", a, cr::jl_column(a, cal, root.substream(config++), workers));
    record("normalization", a, cr::normalization(a, root.substream(config++), workers));
    record("rip_row", a, cr::rip(DesignModel::Row, a, cal, root.substream(config++), workers));
    record("rip_column", a, cr::rip(DesignModel::Column, a, cal, root.substream(config++), workers));
  }
  return cal;
}

}  // namespace htsk
