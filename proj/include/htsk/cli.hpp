#pragma once

#include "htsk/applications.hpp"
#include "htsk/calibration.hpp"
#include "htsk/concentration_lab.hpp"
#include "htsk/ensembles.hpp"
#include "htsk/json_io.hpp"
#include "htsk/matrix_io.hpp"
#include "htsk/report.hpp"
#include "htsk/set_geometry.hpp"
#include "htsk/tail_distributions.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace htsk::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kCheckFailed = 3, kIo = 4 };

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"sample", "psinorm",   "gamma", "tails",    "hanson-wright",
                                              "jl",     "rip",       "normalize", "calibrate"};
  return names;
}

// Runtime options. They never enter the hashed config, so artifacts do not
// depend on them.
struct Options {
  std::size_t workers = 1;
  std::string output_dir = ".";
  bool check = false;
  std::optional<std::string> calibration_path;
};

// Lazily loaded calibration; `version` stays empty when nothing needed it.
class CalibrationSource {
 public:
  explicit CalibrationSource(std::optional<std::string> path) : path_(std::move(path)) {}
  const Calibration& get() {
    if (!cal_) cal_ = load_calibration(path_.value_or(default_calibration_path()));
    return *cal_;
  }
  std::optional<int> version() const { return cal_ ? std::optional<int>(cal_->version) : std::nullopt; }

 private:
  std::optional<std::string> path_;
  std::optional<Calibration> cal_;
};

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const json& config) { return fnv1a_hex(dump_json(config, -1)); }

// ---------------------------------------------------------------------------
// Config resolution: raw JSON (file plus flag overrides) -> fully resolved
// config with every default written out.

namespace detail {

inline bool uses_law(const std::string& cmd) { return cmd == "psinorm" || cmd == "hanson-wright"; }
inline bool uses_ensemble(const std::string& cmd) {
  return cmd == "tails" || cmd == "jl" || cmd == "rip" || cmd == "normalize";
}

inline std::size_t default_trials(const std::string& cmd) {
  if (cmd == "psinorm") return 100000;
  if (cmd == "jl") return 20;
  if (cmd == "rip") return 1;
  if (cmd == "normalize") return 1000;
  return 10000;
}

inline json default_law(double alpha) {
  return {{"family", alpha == 2.0 ? "gaussian" : "symmetric_weibull"}, {"alpha", alpha}, {"scale", 1.0}};
}

inline json resolve_law(json law, double alpha) {
  if (law.is_null()) return default_law(alpha);
  require_keys(law, {"family", "alpha", "scale", "samples"}, "law");
  if (law.contains("alpha") && get_field<double>(law, "alpha", "law") != alpha)
    throw SchemaError("law.alpha disagrees with the top-level alpha");
  if (!law.contains("family")) law["family"] = default_law(alpha)["family"];
  law["alpha"] = alpha;
  if (!law.contains("scale")) law["scale"] = 1.0;
  return to_json(tail_law_from_json(law));
}

template <typename T>
T take(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? get_field<T>(j, key, where) : fallback;
}

inline json resolve_params(const std::string& cmd, const json& p, bool has_set) {
  const std::string w = "params";
  json out = json::object();
  if (cmd == "sample") {
    require_keys(p, {"target"}, w);
    out["target"] = take<std::string>(p, "target", "law", w);
    if (out["target"] != "law" && out["target"] != "matrix") throw SchemaError("params.target must be law or matrix");
  } else if (cmd == "psinorm") {
    require_keys(p, {"p_max"}, w);
    out["p_max"] = take<int>(p, "p_max", 16, w);
    if (out["p_max"].get<int>() < 1) throw SchemaError("params.p_max must be >= 1");
  } else if (cmd == "gamma" || cmd == "calibrate") {
    require_keys(p, {}, w);
  } else if (cmd == "tails" || cmd == "normalize") {
    require_keys(p, {"net_size"}, w);
    out["net_size"] = take<std::size_t>(p, "net_size", 256, w);
    if (out["net_size"].get<std::size_t>() == 0) throw SchemaError("params.net_size must be positive");
  } else if (cmd == "hanson-wright") {
    require_keys(p, {"form", "matrix", "symmetrize"}, w);
    out["form"] = take<std::string>(p, "form", "quadratic", w);
    if (out["form"] != "quadratic" && out["form"] != "norm") throw SchemaError("params.form must be quadratic or norm");
    out["symmetrize"] = take<bool>(p, "symmetrize", false, w);
    if (p.contains("matrix")) {
      out["matrix"] = p.at("matrix");
    } else if (out["form"] == "quadratic") {
      out["matrix"] = json::array({json::array({1.0, 0.0}), json::array({0.0, -1.0})});
    } else {
      json eye = json::array();
      for (int i = 0; i < 4; ++i) {
        json row = json::array();
        for (int j = 0; j < 4; ++j) row.push_back(i == j ? 1.0 : 0.0);
        eye.push_back(row);
      }
      out["matrix"] = eye;
    }
  } else if (cmd == "jl") {
    require_keys(p, {"eps", "delta", "points"}, w);
    out["eps"] = take<double>(p, "eps", 0.25, w);
    out["delta"] = take<double>(p, "delta", 0.05, w);
    validate_jl(out["eps"], out["delta"]);
    if (!has_set) {
      out["points"] = take<std::size_t>(p, "points", 1000, w);
      if (out["points"].get<std::size_t>() < 2) throw SchemaError("params.points must be >= 2");
    } else if (p.contains("points")) {
      throw SchemaError("params.points conflicts with an explicit set");
    }
  } else if (cmd == "rip") {
    require_keys(p, {"s", "delta", "u"}, w);
    out["s"] = take<std::size_t>(p, "s", 2, w);
    out["delta"] = take<double>(p, "delta", 0.5, w);
    out["u"] = take<double>(p, "u", 1.0, w);
  }
  return out;
}

// Matrix JSON: array of rows.
inline Matrix matrix_from_rows(const json& rows, const std::string& where) {
  if (!rows.is_array() || rows.empty() || !rows.front().is_array() || rows.front().empty())
    throw SchemaError(where + " must be a non-empty array of rows");
  const std::size_t r = rows.size(), c = rows.front().size();
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (!rows[i].is_array() || rows[i].size() != c) throw SchemaError(where + " rows must have equal length");
    for (std::size_t j = 0; j < c; ++j) {
      if (!rows[i][j].is_number()) throw SchemaError(where + " entries must be numbers");
      m(i, j) = rows[i][j].get<double>();
    }
  }
  return m;
}

inline bool kind_is(const json& ens, const char* kind) { return ens.at("kind").get<std::string>() == kind; }

}  // namespace detail

/// Validates `raw` and writes out every default. Unknown keys anywhere are
/// schema errors. Commands that size their matrix from a calibrated formula
/// (jl, normalize) store the computed m, so a manifest rerun never depends on
/// the calibration file for its dimensions.
inline json resolve_config(const json& raw, CalibrationSource& cal) {
  using namespace detail;
  require_keys(raw, {"command", "seed", "trials", "alpha", "law", "ensemble", "set", "thresholds", "params"}, "config");
  const std::string cmd = get_field<std::string>(raw, "command", "config");
  if (std::find(command_names().begin(), command_names().end(), cmd) == command_names().end())
    throw SchemaError("unknown command '" + cmd + "'");
  json c = json::object();
  c["command"] = cmd;
  c["seed"] = take<std::uint64_t>(raw, "seed", cmd == "calibrate" ? kCalibrationSeed : 1, "config");
  if (cmd == "calibrate") {
    for (const char* k : {"trials", "alpha", "law", "ensemble", "set", "thresholds"})
      if (raw.contains(k)) throw SchemaError(std::string("calibrate does not take '") + k + "'");
    c["params"] = resolve_params(cmd, raw.value("params", json::object()), false);
    return c;
  }
  const double alpha = take<double>(raw, "alpha", 2.0, "config");
  try {
    validate_alpha(alpha);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  c["alpha"] = alpha;
  const json params_raw = raw.value("params", json::object());
  const bool sample_matrix = cmd == "sample" && params_raw.is_object() && params_raw.value("target", "law") == "matrix";
  if (cmd != "gamma" && !sample_matrix) {
    c["trials"] = take<std::size_t>(raw, "trials", default_trials(cmd), "config");
    if (c["trials"].get<std::size_t>() == 0) throw SchemaError("trials must be positive");
  } else if (raw.contains("trials")) {
    throw SchemaError("'" + cmd + "' does not take trials");
  }
  if (cmd == "psinorm" && c["trials"].get<std::size_t>() < kMinPsiSamples)
    throw SchemaError("psinorm needs at least 10000 trials");

  const bool wants_ensemble = uses_ensemble(cmd) || sample_matrix;
  const bool wants_law = uses_law(cmd) || (cmd == "sample" && !sample_matrix);
  if (wants_law) {
    c["law"] = resolve_law(raw.value("law", json()), alpha);
    if (raw.contains("ensemble")) throw SchemaError("'" + cmd + "' does not take an ensemble");
  }
  if (wants_ensemble) {
    json e = raw.value("ensemble", json::object());
    require_keys(e, {"kind", "m", "n", "law", "column_law", "nominal_K"}, "ensemble");
    std::string kind = take<std::string>(e, "kind", "row", "ensemble");
    ensemble_kind_from_string(kind);
    if (kind == "custom") throw SchemaError("custom ensembles are library-only");
    if (cmd == "jl" && kind != "row" && kind != "column") throw SchemaError("jl needs a row or column ensemble");
    json re = json::object();
    re["kind"] = kind;
    std::size_t n_default = cmd == "jl" ? 100 : cmd == "rip" ? 12 : cmd == "normalize" ? 32 : 10;
    re["n"] = take<std::size_t>(e, "n", n_default, "ensemble");
    if (kind == "row") {
      json law = e.contains("law") ? e.at("law") : raw.value("law", json());
      re["law"] = resolve_law(law, alpha);
    } else if (e.contains("law") || raw.contains("law")) {
      throw SchemaError("only row ensembles take an entry law");
    }
    if (kind == "column") {
      re["column_law"] = take<std::string>(e, "column_law", std::string(to_string(default_column_law(alpha))), "ensemble");
      column_law_from_string(re["column_law"].get<std::string>());
    } else if (e.contains("column_law")) {
      throw SchemaError("column_law is only valid for column ensembles");
    }
    if (kind == "counterexample" && alpha != 2.0) throw SchemaError("the counterexample ensemble is defined at alpha 2");
    if (e.contains("nominal_K")) re["nominal_K"] = get_field<double>(e, "nominal_K", "ensemble");
    if (e.contains("m")) {
      re["m"] = get_field<std::size_t>(e, "m", "ensemble");
    } else if (cmd == "jl" || cmd == "normalize") {
      re["m"] = nullptr;  // filled below from the calibrated formula
    } else {
      re["m"] = cmd == "rip" ? 60 : 100;
    }
    if (!re["m"].is_null() && re["m"].get<std::size_t>() == 0) throw SchemaError("ensemble.m must be positive");
    c["ensemble"] = re;
  } else if (raw.contains("ensemble")) {
    throw SchemaError("'" + cmd + "' does not take an ensemble");
  }
  if (raw.contains("law") && !wants_law && !(wants_ensemble && c["ensemble"]["kind"] == "row"))
    throw SchemaError("'" + cmd + "' does not take a law");

  const bool wants_set = cmd == "gamma" || cmd == "tails" || cmd == "jl" || cmd == "normalize";
  if (wants_set) {
    json s = raw.value("set", json());
    if (s.is_null()) {
      if (cmd == "gamma") s = {{"kind", "sphere"}, {"n", 16}};
      if (cmd == "normalize") s = {{"kind", "sphere"}};
    }
    if (!s.is_null()) {
      if (!s.is_object()) throw SchemaError("set must be an object");
      if (!s.contains("n") && !s.contains("points") && c.contains("ensemble")) s["n"] = c["ensemble"]["n"];
      if (!s.contains("n") && !s.contains("points")) s["n"] = 16;
      try {
        c["set"] = to_json(set_from_json(s));
      } catch (const SchemaError&) {
        throw;
      } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("set: ") + e.what());
      }
      if (c.contains("ensemble") && c["set"]["n"] != c["ensemble"]["n"])
        throw SchemaError("set dimension does not match ensemble.n");
    }
  } else if (raw.contains("set")) {
    throw SchemaError("'" + cmd + "' does not take a set");
  }

  if (cmd == "tails" || cmd == "hanson-wright") {
    c["thresholds"] = raw.contains("thresholds") ? get_field<std::vector<double>>(raw, "thresholds", "config")
                                                 : std::vector<double>{};
  } else if (raw.contains("thresholds")) {
    throw SchemaError("'" + cmd + "' does not take thresholds");
  }
  c["params"] = resolve_params(cmd, params_raw, c.contains("set"));

  if (c.contains("ensemble") && c["ensemble"]["m"].is_null()) {
    json& e = c["ensemble"];
    const std::size_t n = e["n"];
    if (cmd == "jl") {
      const bool row = e["kind"] == "row";
      const double K = row ? psi_norm(standardize(tail_law_from_json(e["law"]))).value
                           : column_K_lambda(column_law_from_string(e["column_law"].get<std::string>()), alpha, cal.get());
      const double C = cal.get().get(row ? "jl_row" : "jl_column", alpha);
      e["m"] = jl_dim(c["params"]["eps"], c["params"]["delta"], alpha, K, row ? DesignModel::Row : DesignModel::Column, C);
    } else {
      if (e["kind"] != "row") throw SchemaError("normalize sizes m from the row-model formula; pass ensemble.m");
      const double K = psi_norm(standardize(tail_law_from_json(e["law"]))).value;
      const double C = cal.get().get("normalization", alpha);
      e["m"] = static_cast<std::size_t>(std::ceil(C * calibration_runs::normalization_unit(K, n, alpha)));
    }
  }
  if (c.contains("ensemble")) {
    const double entries = static_cast<double>(c["ensemble"]["m"].get<std::size_t>()) * c["ensemble"]["n"].get<double>();
    if (entries > kMaxMatrixEntries) throw SchemaError("ensemble exceeds 1e8 entries");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Running a resolved config.

struct RunResult {
  json results = json::object();
  bool check_passed = true;
  std::vector<std::pair<std::string, std::string>> files;  // name, content
};

namespace detail {

inline EnsembleSpec spec_from_config(const json& c, CalibrationSource& cal) {
  const json& e = c.at("ensemble");
  const double alpha = c.at("alpha");
  const std::size_t m = e.at("m"), n = e.at("n");
  const auto kind = ensemble_kind_from_string(e.at("kind").get<std::string>());
  EnsembleSpec spec;
  switch (kind) {
    case EnsembleKind::RowModel: spec = row_model(m, n, tail_law_from_json(e.at("law"))); break;
    case EnsembleKind::ColumnModel:
      spec = calibrated_column_model(m, n, column_law_from_string(e.at("column_law").get<std::string>()), alpha,
                                     cal.get());
      break;
    case EnsembleKind::Counterexample: spec = counterexample_model(m, n); break;
    case EnsembleKind::Custom: throw SchemaError("custom ensembles are library-only");
  }
  if (e.contains("nominal_K")) spec.nominal_K = e.at("nominal_K");
  validate(spec);
  return spec;
}

inline json spec_to_json(const EnsembleSpec& spec) {
  json j{{"kind", std::string(to_string(spec.kind))}, {"m", spec.m}, {"n", spec.n}, {"alpha", spec.alpha},
         {"nominal_K", spec.nominal_K}};
  if (spec.kind == EnsembleKind::RowModel) j["law"] = to_json(spec.entry_law);
  if (spec.kind == EnsembleKind::ColumnModel) j["column_law"] = std::string(to_string(spec.column_law));
  return j;
}

// Streams: trials draw from (seed, 1), points and nets from (seed, 2), net
// probes from (seed, 3).
inline RandomStream trial_stream(const json& c) { return RandomStream(c.at("seed").get<std::uint64_t>(), 1); }
inline RandomStream point_stream(const json& c) { return RandomStream(c.at("seed").get<std::uint64_t>(), 2); }
inline RandomStream probe_stream(const json& c) { return RandomStream(c.at("seed").get<std::uint64_t>(), 3); }

struct PointSet {
  Matrix points;
  bool is_net = false;
  double resolution = 0.0;
};

inline PointSet points_for(const json& c) {
  PointSet ps;
  if (!c.contains("set")) {
    const std::size_t n = c.at("ensemble").at("n");
    ps.points = Matrix::Zero(n, 1);
    ps.points(0, 0) = 1.0;
    return ps;
  }
  const auto t = set_from_json(c.at("set"));
  if (t.kind == SetKind::FinitePoints) {
    ps.points = t.points;
    return ps;
  }
  ps.is_net = true;
  ps.points = sample_net(t, c.at("params").at("net_size"), point_stream(c));
  ps.resolution = estimate_net_resolution(t, ps.points, 1000, probe_stream(c));
  return ps;
}

inline std::vector<double> thresholds_of(const json& c) { return c.at("thresholds").get<std::vector<double>>(); }

inline json net_json(const PointSet& ps, double lipschitz) {
  json j{{"size", ps.points.cols()}, {"is_net", ps.is_net}, {"resolution_estimate", ps.resolution},
         {"lipschitz", lipschitz}, {"bias_bound", lipschitz * ps.resolution}};
  return j;
}

inline RunResult run_sample(const json& c, CalibrationSource& cal) {
  RunResult r;
  if (c.at("params").at("target") == "matrix") {
    const auto spec = spec_from_config(c, cal);
    const Matrix a = generate(spec, trial_stream(c));
    std::ostringstream bin;
    write_matrix_binary(bin, a);
    r.files.emplace_back("matrix.bin", bin.str());
    if (a.size() <= 100000) {
      std::ostringstream csv;
      write_matrix_csv(csv, a);
      r.files.emplace_back("matrix.csv", csv.str());
    }
    const Eigen::RowVectorXd norms = a.colwise().norm();
    r.results = {{"ensemble", spec_to_json(spec)},
                 {"frobenius_norm", a.norm()},
                 {"min_column_norm", norms.minCoeff()},
                 {"max_column_norm", norms.maxCoeff()}};
    return r;
  }
  const auto law = tail_law_from_json(c.at("law"));
  RandomStream s = trial_stream(c);
  const auto x = sample_n(law, s, c.at("trials"));
  CsvWriter w({"value"});
  CompensatedSum sum, sq;
  for (double v : x) {
    w.row(std::vector<double>{v});
    sum.add(v);
  }
  const double mean = sum.value() / static_cast<double>(x.size());
  for (double v : x) sq.add((v - mean) * (v - mean));
  r.files.emplace_back("samples.csv", w.str());
  r.results = {{"law", to_json(law)},
               {"count", x.size()},
               {"mean", mean},
               {"variance", x.size() > 1 ? sq.value() / static_cast<double>(x.size() - 1) : 0.0},
               {"variance_exact", law.variance()}};
  return r;
}

inline constexpr double kPsiCheckTolerance = 0.05;

inline RunResult run_psinorm(const json& c) {
  RunResult r;
  const auto law = tail_law_from_json(c.at("law"));
  RandomStream s = trial_stream(c);
  const auto x = sample_n(law, s, c.at("trials"));
  const auto exact = psi_norm(law);
  const auto est = psi_norm_bisection(x, law.alpha());
  std::vector<int> ps;
  for (int p = 1; p <= c.at("params").at("p_max").get<int>(); ++p) ps.push_back(p);
  const auto growth = moment_growth_check(law, ps);
  const double rel = exact.value > 0.0 ? std::abs(est.value - exact.value) / exact.value : std::abs(est.value);
  r.results = {{"law", to_json(law)},
               {"exact", to_json(exact)},
               {"estimate", to_json(est)},
               {"relative_error", rel},
               {"moment_growth", to_json(growth)}};
  CsvWriter w({"p", "lp_norm", "ratio"});
  for (const auto& e : growth.entries) w.row(std::vector<double>{static_cast<double>(e.p), e.lp_norm, e.ratio});
  r.files.emplace_back("moments.csv", w.str());
  r.check_passed = growth.within_bound && rel <= kPsiCheckTolerance;
  return r;
}

inline RunResult run_gamma(const json& c, CalibrationSource& cal) {
  RunResult r;
  const double alpha = c.at("alpha");
  const auto t = set_from_json(c.at("set"));
  const auto bracket = complexity_bracket(t, alpha);
  const auto dudley = dudley_gamma_upper(t, alpha);
  r.results["set"] = c.at("set");
  r.results["bracket"] = to_json(bracket);
  r.results["rad"] = radius(t);
  r.results["dudley_method"] = std::string(to_string(dudley.method));
  r.check_passed = bracket.gamma_lower <= bracket.gamma_upper;
  if (t.kind == SetKind::FinitePoints && static_cast<std::size_t>(t.points.cols()) <= kExactGammaLimit) {
    r.results["exact_radius_convention"] = to_json(gamma_exact_small(t.points, alpha, BlockSize::Radius));
  }
  if (t.kind == SetKind::SparseSphere) {
    const double sd = static_cast<double>(t.s);
    const double ref = std::pow(sd * std::log(std::exp(1.0) * static_cast<double>(t.n) / sd), 1.0 / alpha);
    const double C = cal.get().get("sparse_gamma", alpha);
    const bool ok = bracket.gamma_upper <= C * ref;
    r.results["sparse_check"] = {{"reference", ref}, {"constant", C}, {"bound", C * ref}, {"ok", ok}};
    r.check_passed = r.check_passed && ok;
  }
  CsvWriter w({"u", "log_covering_upper"});
  const double rad = radius(t);
  for (int j = 0; j <= 20 && rad > 0.0; ++j) {
    const double u = rad * std::ldexp(1.0, -j);
    w.row(std::vector<double>{u, log_covering_upper(t, u)});
  }
  r.files.emplace_back("covering.csv", w.str());
  return r;
}

inline constexpr double kExponentTolerance = 0.15;

inline RunResult run_tails(const json& c, CalibrationSource& cal, std::size_t workers) {
  RunResult r;
  const double alpha = c.at("alpha");
  const auto spec = spec_from_config(c, cal);
  const auto stat = model_statistic(spec);
  const auto ps = points_for(c);
  const auto values = mc_sup_deviations(spec, stat, ps.points, c.at("trials"), trial_stream(c), workers);
  auto thr = thresholds_of(c);
  if (thr.empty()) thr = quantile_thresholds(values);
  auto curve = tail_curve_from_values(values, thr);
  curve.fit = fit_tail_exponent(curve);
  auto est = summarize(values);
  const auto finite = SetDescriptor::finite(ps.points);
  const auto bracket = complexity_bracket(finite, alpha);
  const double denom = bound_denominator(spec, stat, {bracket.gamma_upper, radius(finite)});
  est.bound_ratio = denom > 0.0 ? est.mean / denom : 0.0;
  const double lip = deviation_lipschitz(stat, generate(spec, trial_stream(c).substream(0)));
  r.results = {{"ensemble", spec_to_json(spec)},
               {"statistic", std::string(to_string(stat.model))},
               {"tail", tail_summary(curve)},
               {"expectation", to_json(est)},
               {"bracket", to_json(bracket)},
               {"net", net_json(ps, lip)}};
  r.check_passed = curve.fit && std::abs(curve.fit->exponent - alpha) <= kExponentTolerance;
  r.files.emplace_back("tail.csv", tail_curve_csv(curve));
  r.files.emplace_back("plot.svg", tail_curve_svg(curve, alpha, "sup deviation, " + std::string(to_string(spec.kind)) +
                                                                     " model, alpha " + alpha_key(alpha)));
  return r;
}

inline RunResult run_hanson_wright(const json& c, CalibrationSource& cal, std::size_t workers) {
  RunResult r;
  const double alpha = c.at("alpha");
  const auto law = standardize(tail_law_from_json(c.at("law")));
  const json& p = c.at("params");
  const Matrix m = matrix_from_rows(p.at("matrix"), "params.matrix");
  const auto thr = thresholds_of(c);
  const bool quadratic = p.at("form") == "quadratic";
  ScalarTailCheck chk;
  double c_hat = 0.0;
  if (quadratic) {
    c_hat = cal.get().get("hanson_wright", alpha);
    try {
      chk = hanson_wright_check(law, m, c.at("trials"), trial_stream(c), c_hat, workers, thr, p.at("symmetrize"));
    } catch (const std::invalid_argument& e) {
      throw SchemaError(e.what());
    }
  } else {
    c_hat = cal.get().get("bx_norm", alpha);
    chk = bx_norm_check(law, m, c.at("trials"), trial_stream(c), c_hat, workers, thr);
  }
  json tail = tail_summary(chk.curve);
  tail["envelope_ok"] = chk.envelope.ok;
  r.results = {{"law", to_json(law)},
               {"form", p.at("form")},
               {"K", chk.K},
               {"hs_norm", chk.hs_norm},
               {"op_norm", chk.op_norm},
               {"c_hat", c_hat},
               {"tail", tail},
               {"worst_excess", chk.envelope.worst_excess}};
  r.check_passed = chk.envelope.ok;
  r.files.emplace_back("tail.csv", tail_curve_csv(chk.curve, chk.envelope.envelope));
  r.files.emplace_back("plot.svg", tail_curve_svg(chk.curve, alpha, quadratic ? "quadratic form deviation" : "norm deviation"));
  return r;
}

inline RunResult run_jl(const json& c, CalibrationSource& cal, std::size_t workers) {
  RunResult r;
  const double alpha = c.at("alpha");
  const json& p = c.at("params");
  const auto spec = spec_from_config(c, cal);
  const bool row = spec.kind == EnsembleKind::RowModel;
  Matrix pts;
  if (c.contains("set")) {
    const auto t = set_from_json(c.at("set"));
    if (t.kind != SetKind::FinitePoints) throw SchemaError("jl needs a finite point set");
    pts = t.points;
  } else {
    const std::size_t count = p.at("points");
    pts.resize(spec.n, count);
    for (std::size_t j = 0; j < count; ++j) {
      RandomStream s = point_stream(c).substream(j);
      for (std::size_t i = 0; i < spec.n; ++i) pts(i, j) = s.normal();
    }
  }
  const double eps = p.at("eps"), delta = p.at("delta");
  const double K = row ? spec.nominal_K : column_K_lambda(spec.column_law, alpha, cal.get());
  const auto model = row ? DesignModel::Row : DesignModel::Column;
  const double C = cal.get().get(row ? "jl_row" : "jl_column", alpha);
  const auto rep = jl_embed_and_score(pts, spec, eps, c.at("trials"), trial_stream(c), workers);
  r.results = to_json(rep);
  r.results["delta"] = delta;
  r.results["alpha"] = alpha;
  r.results["K"] = K;
  r.results["constant"] = C;
  r.results["m_required"] = jl_dim(eps, delta, alpha, K, model, C);
  r.results["model"] = std::string(to_string(model));
  CsvWriter w({"trial", "ok_fraction"});
  for (std::size_t t = 0; t < rep.ok_fraction.size(); ++t)
    w.row(std::vector<double>{static_cast<double>(t), rep.ok_fraction[t]});
  r.files.emplace_back("jl.csv", w.str());
  r.check_passed = rep.mean_ok_fraction >= 1.0 - delta;
  return r;
}

inline RunResult run_rip(const json& c, CalibrationSource& cal, std::size_t workers) {
  RunResult r;
  const double alpha = c.at("alpha");
  const json& p = c.at("params");
  const auto spec = spec_from_config(c, cal);
  const std::size_t s = p.at("s");
  const double delta = p.at("delta"), u = p.at("u");
  if (s == 0 || s > spec.n) throw SchemaError("params.s must lie in [1, n]");
  if (!(delta > 0.0 && delta < 1.0)) throw SchemaError("params.delta must lie in (0, 1)");
  const bool column = spec.kind == EnsembleKind::ColumnModel;
  const double scale = column ? std::sqrt(static_cast<double>(spec.m)) : 1.0;
  const std::size_t trials = c.at("trials");
  std::vector<RIPReport> reps(trials);
  run_trials(trials, trial_stream(c), workers, [&](std::size_t i, const RandomStream& rs) {
    reps[i] = rip_constant_exact(scale * generate(spec, rs), s, kRipExhaustiveBudget, rs.substream(1u << 20));
    return reps[i].delta_s;
  });
  const auto model = column ? DesignModel::Column : DesignModel::Row;
  const double K = column ? column_K_lambda(spec.column_law, alpha, cal.get()) : spec.nominal_K;
  const double C = cal.get().get(column ? "rip_column" : "rip_row", alpha);
  const std::size_t m_formula = rip_sample_size(delta, alpha, K, s, spec.n, u, model, C);
  CsvWriter w({"trial", "delta_s", "delta_s_unsquared", "supports_checked"});
  CompensatedSum sum;
  double worst = 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    reps[i].m_formula = m_formula;
    w.row(std::vector<double>{static_cast<double>(i), reps[i].delta_s, reps[i].delta_s_unsquared,
                              static_cast<double>(reps[i].supports_checked)});
    sum.add(reps[i].delta_s);
    worst = std::max(worst, reps[i].delta_s);
    if (reps[i].delta_s <= delta) ++ok;
  }
  const double frac = static_cast<double>(ok) / static_cast<double>(trials);
  r.results = {{"first", to_json(reps.front())},
               {"ensemble", spec_to_json(spec)},
               {"K", K},
               {"constant", C},
               {"m_formula", m_formula},
               {"mean_delta_s", sum.value() / static_cast<double>(trials)},
               {"max_delta_s", worst},
               {"success_fraction", frac},
               {"target_fraction", 1.0 - std::exp(-u)}};
  r.files.emplace_back("rip.csv", w.str());
  r.check_passed = frac >= 1.0 - std::exp(-u);
  return r;
}

inline RunResult run_normalize(const json& c, CalibrationSource& cal, std::size_t workers) {
  RunResult r;
  const double alpha = c.at("alpha");
  const auto spec = spec_from_config(c, cal);
  const auto ps = points_for(c);
  const auto finite = SetDescriptor::finite(ps.points);
  const auto bracket = complexity_bracket(finite, alpha);
  const auto est = mc_expectation_normalized(spec, ps.points, c.at("trials"), trial_stream(c), workers,
                                             BoundTerms{bracket.gamma_upper, radius(finite)});
  r.results = {{"ensemble", spec_to_json(spec)},
               {"event_probability", est.event_probability},
               {"event_count", est.event_count},
               {"deviation", to_json(est.deviation)},
               {"bracket", to_json(bracket)},
               {"net", net_json(ps, 0.0)}};
  if (spec.kind == EnsembleKind::RowModel) {
    const double C = cal.get().get("normalization", alpha);
    r.results["m_formula"] = std::ceil(C * calibration_runs::normalization_unit(spec.nominal_K, spec.n, alpha));
  }
  r.check_passed = est.event_probability >= calibration_runs::kNormalizationTarget;
  return r;
}

inline RunResult run_calibrate(const json& c, std::size_t workers) {
  RunResult r;
  const auto cal = calibrate(c.at("seed").get<std::uint64_t>(), workers,
                             [](const std::string& line) { std::cerr << "calibrate: " << line << '\n'; });
  r.results = to_json(cal);
  r.files.emplace_back("calibration.json", dump_json(to_json(cal)));
  return r;
}

}  // namespace detail

inline RunResult execute(const json& config, CalibrationSource& cal, std::size_t workers) {
  const std::string cmd = config.at("command");
  if (cmd == "sample") return detail::run_sample(config, cal);
  if (cmd == "psinorm") return detail::run_psinorm(config);
  if (cmd == "gamma") return detail::run_gamma(config, cal);
  if (cmd == "tails") return detail::run_tails(config, cal, workers);
  if (cmd == "hanson-wright") return detail::run_hanson_wright(config, cal, workers);
  if (cmd == "jl") return detail::run_jl(config, cal, workers);
  if (cmd == "rip") return detail::run_rip(config, cal, workers);
  if (cmd == "normalize") return detail::run_normalize(config, cal, workers);
  if (cmd == "calibrate") return detail::run_calibrate(config, workers);
  throw SchemaError("unknown command '" + cmd + "'");
}

// Writes manifest.json, report.json and the command's data files.
inline void write_artifacts(const Options& opt, const json& config, const RunResult& res,
                            const CalibrationSource& cal) {
  namespace fs = std::filesystem;
  const fs::path dir(opt.output_dir);
  const std::string hash = config_hash(config);
  write_text_file((dir / "manifest.json").string(), dump_json({{"config", config}, {"config_hash", hash}}));
  json report{{"command", config.at("command")},
              {"config_hash", hash},
              {"seed", config.at("seed")},
              {"results", res.results},
              {"check_passed", res.check_passed}};
  report["calibration_version"] = cal.version() ? json(*cal.version()) : json(nullptr);
  json files = json::array();
  for (const auto& [name, content] : res.files) {
    write_text_file((dir / name).string(), content);
    files.push_back({{"name", name}, {"fnv1a", fnv1a_hex(content)}});
  }
  report["artifacts"] = files;
  write_text_file((dir / "report.json").string(), dump_json(report));
}

inline void prepare_output_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir);
  const auto probe = std::filesystem::path(dir) / ".htsk_write_probe";
  {
    std::ofstream os(probe);
    if (!os) throw IoError("output directory is not writable: " + dir);
  }
  std::filesystem::remove(probe, ec);
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    throw SchemaError("config " + path + " is not valid JSON: " + e.what());
  }
}

// A manifest ({config, config_hash}) is accepted wherever a config is.
inline json unwrap_manifest(const json& j) {
  if (j.is_object() && j.contains("config") && j.contains("config_hash")) {
    require_keys(j, {"config", "config_hash"}, "manifest");
    if (config_hash(j.at("config")) != j.at("config_hash").get<std::string>())
      throw SchemaError("manifest hash does not match its config");
    return j.at("config");
  }
  return j;
}

inline void set_path(json& j, std::initializer_list<const char*> path, json value) {
  json* cur = &j;
  for (auto it = path.begin(); it != path.end(); ++it) {
    if (std::next(it) == path.end()) {
      (*cur)[*it] = std::move(value);
    } else {
      if (!cur->contains(*it) || !(*cur)[*it].is_object()) (*cur)[*it] = json::object();
      cur = &(*cur)[*it];
    }
  }
}

/// Entry point shared by the tool and the tests. Returns the process exit code.
inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Monte Carlo laboratory for alpha-subexponential random matrices"};
  std::string command, config_path, output_dir = ".", calibration_path;
  std::size_t workers = 1;
  bool check = false, symmetrize = false;
  std::uint64_t seed = 0;
  std::size_t trials = 0, m = 0, n = 0, s = 0, points = 0, net_size = 0;
  double alpha = 0, scale = 0, r = 0, eps = 0, delta = 0, u = 0, nominal_k = 0;
  int p_max = 0;
  std::string model, law, column_law, set_kind, form, target;
  std::vector<double> thresholds;

  app.add_option("command", command, "sample | psinorm | gamma | tails | hanson-wright | jl | rip | normalize | calibrate");
  app.add_option("--config", config_path, "JSON config or manifest; flags override its values");
  auto* o_out = app.add_option("-o,--output-dir", output_dir, "directory for manifest, report and data files");
  app.add_option("--workers", workers, "worker threads (outputs do not depend on it)")->check(CLI::PositiveNumber);
  app.add_flag("--check", check, "exit 3 when the run's acceptance check fails");
  app.add_option("--calibration", calibration_path, "calibration fixtures file (default: $HTSK_CALIBRATION)");
  auto* o_seed = app.add_option("--seed", seed);
  auto* o_trials = app.add_option("--trials", trials);
  auto* o_alpha = app.add_option("--alpha", alpha);
  auto* o_model = app.add_option("--model", model, "row | column | counterexample");
  auto* o_law = app.add_option("--law", law, "symmetric_weibull | gaussian | rademacher | uniform");
  auto* o_scale = app.add_option("--scale", scale);
  auto* o_cl = app.add_option("--column-law", column_law, "uniform_sphere | normalized_weibull");
  auto* o_m = app.add_option("--m", m);
  auto* o_n = app.add_option("--n", n);
  auto* o_k = app.add_option("--nominal-k", nominal_k);
  auto* o_set = app.add_option("--set", set_kind, "finite | sphere | sparse | ball");
  auto* o_s = app.add_option("--s", s, "sparsity (set s, or RIP order for rip)");
  auto* o_r = app.add_option("--r", r, "ball radius");
  auto* o_thr = app.add_option("--thresholds", thresholds)->delimiter(',');
  auto* o_eps = app.add_option("--eps", eps);
  auto* o_delta = app.add_option("--delta", delta);
  auto* o_u = app.add_option("--u", u);
  auto* o_points = app.add_option("--points", points);
  auto* o_net = app.add_option("--net-size", net_size);
  auto* o_form = app.add_option("--form", form, "quadratic | norm (hanson-wright)");
  auto* o_sym = app.add_flag("--symmetrize", symmetrize);
  auto* o_target = app.add_option("--target", target, "law | matrix (sample)");
  auto* o_pmax = app.add_option("--p-max", p_max);
  (void)o_out;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  }

  Options opt;
  opt.workers = workers;
  opt.output_dir = output_dir;
  opt.check = check;
  if (!calibration_path.empty()) opt.calibration_path = calibration_path;
  CalibrationSource cal(opt.calibration_path);

  try {
    json raw = config_path.empty() ? json::object() : unwrap_manifest(read_json_file(config_path));
    if (!raw.is_object()) throw SchemaError("config must be a JSON object");
    if (!command.empty()) raw["command"] = command;
    if (!raw.contains("command")) throw SchemaError("no command given");
    const std::string cmd = raw["command"].is_string() ? raw["command"].get<std::string>() : "";
    if (o_seed->count()) raw["seed"] = seed;
    if (o_trials->count()) raw["trials"] = trials;
    if (o_alpha->count()) raw["alpha"] = alpha;
    const bool matrix_cmd = detail::uses_ensemble(cmd) || (cmd == "sample" && (o_target->count() ? target == "matrix" : raw.value("params", json::object()).value("target", "law") == "matrix"));
    if (o_law->count()) set_path(raw, matrix_cmd ? std::initializer_list<const char*>{"ensemble", "law", "family"}
                                                 : std::initializer_list<const char*>{"law", "family"}, law);
    if (o_scale->count()) set_path(raw, matrix_cmd ? std::initializer_list<const char*>{"ensemble", "law", "scale"}
                                                   : std::initializer_list<const char*>{"law", "scale"}, scale);
    if (o_model->count()) set_path(raw, {"ensemble", "kind"}, model);
    if (o_cl->count()) set_path(raw, {"ensemble", "column_law"}, column_law);
    if (o_m->count()) set_path(raw, {"ensemble", "m"}, m);
    if (o_k->count()) set_path(raw, {"ensemble", "nominal_K"}, nominal_k);
    if (o_set->count()) set_path(raw, {"set", "kind"}, set_kind);
    if (o_n->count()) {
      if (matrix_cmd) set_path(raw, {"ensemble", "n"}, n);
      if (raw.contains("set") || cmd == "gamma") set_path(raw, {"set", "n"}, n);
    }
    if (o_s->count()) set_path(raw, cmd == "rip" ? std::initializer_list<const char*>{"params", "s"}
                                                 : std::initializer_list<const char*>{"set", "s"}, s);
    if (o_r->count()) set_path(raw, {"set", "r"}, r);
    if (o_thr->count()) raw["thresholds"] = thresholds;
    if (o_eps->count()) set_path(raw, {"params", "eps"}, eps);
    if (o_delta->count()) set_path(raw, {"params", "delta"}, delta);
    if (o_u->count()) set_path(raw, {"params", "u"}, u);
    if (o_points->count()) set_path(raw, {"params", "points"}, points);
    if (o_net->count()) set_path(raw, {"params", "net_size"}, net_size);
    if (o_form->count()) set_path(raw, {"params", "form"}, form);
    if (o_sym->count()) set_path(raw, {"params", "symmetrize"}, symmetrize);
    if (o_target->count()) set_path(raw, {"params", "target"}, target);
    if (o_pmax->count()) set_path(raw, {"params", "p_max"}, p_max);

    const json config = resolve_config(raw, cal);
    prepare_output_dir(opt.output_dir);
    const auto res = execute(config, cal, opt.workers);
    write_artifacts(opt, config, res, cal);
    out << "wrote " << opt.output_dir << " (config " << config_hash(config) << ", check "
        << (res.check_passed ? "passed" : "failed") << ")\n";
    if (opt.check && !res.check_passed) return kCheckFailed;
    return kOk;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  }
}

}  // namespace htsk::cli
