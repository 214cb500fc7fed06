#pragma once

#include "htsk/applications.hpp"
#include "htsk/concentration_lab.hpp"
#include "htsk/ensembles.hpp"
#include "htsk/matrix_io.hpp"
#include "htsk/set_geometry.hpp"
#include "htsk/tail_distributions.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace htsk {

using json = nlohmann::json;

class SchemaError : public std::invalid_argument {
 public:
  explicit SchemaError(const std::string& what) : std::invalid_argument(what) {}
};

namespace detail {

inline void dump17(const json& j, std::string& out, int indent, int depth) {
  auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += json(it.key()).dump();
        out += indent < 0 ? ":" : ": ";
        dump17(it.value(), out, indent, depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += '[';
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        dump17(v, out, indent, depth + 1);
      }
      newline(depth);
      out += ']';
      return;
    }
    case json::value_t::number_float: {
      const double x = j.get<double>();
      out += std::isfinite(x) ? format_double(x) : "null";
      return;
    }
    default: out += j.dump();
  }
}

}  // namespace detail

// Serializes with every float at 17 significant digits. Object keys come out
// sorted (nlohmann::json default), so equal values give equal bytes.
inline std::string dump_json(const json& j, int indent = 2) {
  std::string out;
  detail::dump17(j, out, indent, 0);
  if (indent >= 0) out += '\n';
  return out;
}

// Throws SchemaError naming the first key of `j` outside `allowed`.
inline void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw SchemaError("unknown key '" + it.key() + "' in " + where);
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw SchemaError("missing key '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError("wrong type for '" + std::string(key) + "' in " + where);
  }
}

inline json matrix_to_json(const Matrix& pts) {
  json arr = json::array();
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    json p = json::array();
    for (Eigen::Index i = 0; i < pts.rows(); ++i) p.push_back(pts(i, j));
    arr.push_back(std::move(p));
  }
  return arr;
}

// Each inner array is one point; the result holds them as columns.
inline Matrix matrix_from_json(const json& arr, const std::string& where) {
  if (!arr.is_array() || arr.empty()) throw SchemaError(where + " must be a non-empty array of points");
  const std::size_t n = arr.front().is_array() ? arr.front().size() : 0;
  if (n == 0) throw SchemaError(where + " points must be non-empty arrays");
  Matrix pts(n, arr.size());
  for (std::size_t j = 0; j < arr.size(); ++j) {
    if (!arr[j].is_array() || arr[j].size() != n) throw SchemaError(where + " points must share one dimension");
    for (std::size_t i = 0; i < n; ++i) {
      if (!arr[j][i].is_number()) throw SchemaError(where + " coordinates must be numbers");
      pts(i, j) = arr[j][i].get<double>();
    }
  }
  return pts;
}

inline json to_json(const TailLaw& law) {
  json j{{"family", std::string(to_string(law.family()))}, {"alpha", law.alpha()}, {"scale", law.scale()}};
  if (law.family() == Family::CustomEmpirical) j["samples"] = std::vector<double>(law.support().begin(), law.support().end());
  return j;
}

inline TailLaw tail_law_from_json(const json& j) {
  const std::string where = "law";
  require_keys(j, {"family", "alpha", "scale", "samples"}, where);
  const auto family = family_from_string(get_field<std::string>(j, "family", where));
  const double alpha = j.contains("alpha") ? get_field<double>(j, "alpha", where) : 2.0;
  const double scale = j.contains("scale") ? get_field<double>(j, "scale", where) : 1.0;
  if (j.contains("samples") && family != Family::CustomEmpirical)
    throw SchemaError("'samples' is only valid for custom_empirical laws");
  switch (family) {
    case Family::SymmetricWeibull: return TailLaw::symmetric_weibull(alpha, scale);
    case Family::Gaussian: return TailLaw::gaussian(scale, alpha);
    case Family::Rademacher: return TailLaw::rademacher(scale, alpha);
    case Family::Uniform: return TailLaw::uniform(scale, alpha);
    case Family::CustomEmpirical:
      return TailLaw::custom_empirical(get_field<std::vector<double>>(j, "samples", where), alpha, scale);
  }
  throw SchemaError("unknown law family");
}

inline json to_json(const SetDescriptor& t) {
  json j{{"kind", std::string(to_string(t.kind))}, {"n", t.n}};
  if (t.kind == SetKind::SparseSphere) j["s"] = t.s;
  if (t.kind == SetKind::Ball) j["r"] = t.r;
  if (t.kind == SetKind::FinitePoints) j["points"] = matrix_to_json(t.points);
  return j;
}

inline SetDescriptor set_from_json(const json& j) {
  const std::string where = "set";
  require_keys(j, {"kind", "n", "s", "r", "points"}, where);
  const auto kind = set_kind_from_string(get_field<std::string>(j, "kind", where));
  SetDescriptor t;
  switch (kind) {
    case SetKind::FinitePoints:
      t = SetDescriptor::finite(matrix_from_json(j.at("points"), "set.points"));
      if (j.contains("n") && get_field<std::size_t>(j, "n", where) != t.n)
        throw SchemaError("set.n does not match the point dimension");
      break;
    case SetKind::UnitSphere: t = SetDescriptor::unit_sphere(get_field<std::size_t>(j, "n", where)); break;
    case SetKind::SparseSphere:
      t = SetDescriptor::sparse_sphere(get_field<std::size_t>(j, "n", where), get_field<std::size_t>(j, "s", where));
      break;
    case SetKind::Ball:
      t = SetDescriptor::ball(get_field<std::size_t>(j, "n", where),
                              j.contains("r") ? get_field<double>(j, "r", where) : 1.0);
      break;
  }
  validate(t);
  return t;
}

inline json to_json(const PsiNormEstimate& e) {
  return {{"value", e.value},     {"method", std::string(to_string(e.method))}, {"sample_count", e.sample_count},
          {"ci_low", e.ci_low},   {"ci_high", e.ci_high}};
}

inline json to_json(const ComplexityBracket& b) {
  return {{"gamma_lower", b.gamma_lower},
          {"gamma_upper", b.gamma_upper},
          {"alpha", b.alpha},
          {"method_lower", std::string(to_string(b.method_lower))},
          {"method_upper", std::string(to_string(b.method_upper))},
          {"block_size", std::string(to_string(b.block_size))},
          {"dudley_integral", b.dudley_integral},
          {"dudley_constant", b.dudley_constant}};
}

inline json to_json(const MomentGrowthReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) entries.push_back({{"p", e.p}, {"lp_norm", e.lp_norm}, {"ratio", e.ratio}});
  return {{"psi_norm", r.psi_norm},
          {"psi_method", std::string(to_string(r.psi_method))},
          {"entries", entries},
          {"max_ratio", r.max_ratio},
          {"within_bound", r.within_bound}};
}

inline json to_json(const McEstimate& e) {
  json j{{"mean", e.mean},         {"std_error", e.std_error},         {"ci_low", e.ci_low},
         {"ci_high", e.ci_high},   {"used_trials", e.used_trials},     {"discarded_trials", e.discarded_trials}};
  j["bound_ratio"] = e.bound_ratio ? json(*e.bound_ratio) : json(nullptr);
  return j;
}

// Summary of a tail curve; the curve itself goes to CSV.
inline json tail_summary(const TailCurve& c) {
  json j{{"trials", c.trials}, {"thresholds", c.thresholds.size()}};
  if (c.fit) {
    j["fitted_exponent"] = c.fit->exponent;
    j["fit_r2"] = c.fit->r2;
    j["fit_points"] = c.fit->points_used;
    j["fit_location"] = c.fit->location;
    j["fit_flag"] = "ok";
  } else {
    j["fit_flag"] = "fewer_than_3_usable_points";
  }
  return j;
}

inline json to_json(const JLReport& r) {
  return {{"m_used", r.m},
          {"eps", r.eps},
          {"trials", r.trials},
          {"pairs", r.pairs},
          {"coincident_pairs", r.coincident_pairs},
          {"pairwise_ok_fraction", r.mean_ok_fraction},
          {"trials_all_ok", r.trials_all_ok},
          {"worst_distortion", r.worst_distortion}};
}

inline json to_json(const RIPReport& r) {
  json j{{"s", r.s},
         {"delta_s", r.delta_s},
         {"delta_s_unsquared", r.delta_s_unsquared},
         {"method", std::string(to_string(r.method))},
         {"supports_checked", r.supports_checked},
         {"lower_bound_only", r.method == RipMethod::RandomizedSupports}};
  j["m_formula"] = r.m_formula ? json(*r.m_formula) : json(nullptr);
  return j;
}

}  // namespace htsk
