// Acceptance suite. `acceptance N` runs criterion N, no argument runs all.
// Prints one "CNN PASS|FAIL ..." line per criterion; exit status 1 on any FAIL.

#include "htsk/applications.hpp"
#include "htsk/calibration.hpp"
#include "htsk/cli.hpp"
#include "htsk/concentration_lab.hpp"
#include "htsk/set_geometry.hpp"
#include "htsk/tail_distributions.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace htsk;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

const Calibration& cal() {
  static const Calibration c = load_calibration();
  return c;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double sigma(double p, double n) { return std::sqrt(p * (1.0 - p) / n); }

// Non-increasing in m up to overlapping 95% intervals between neighbours.
Verdict ratio_test(const std::vector<std::size_t>& ms, const std::vector<McEstimate>& est) {
  Verdict v;
  for (std::size_t i = 0; i < est.size(); ++i) {
    v.detail += " m=" + std::to_string(ms[i]) + ":" + fmt("%.4f", est[i].mean) + "[" + fmt("%.4f", est[i].ci_low) + "," +
                fmt("%.4f", est[i].ci_high) + "]";
    if (est[i].bound_ratio) v.detail += " ratio " + fmt("%.4f", *est[i].bound_ratio);
    if (i > 0 && est[i].mean > est[i - 1].mean && est[i].ci_low > est[i - 1].ci_high) v.pass = false;
  }
  return v;
}

Verdict c01_scalar_tails() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr std::size_t N = 1000000;
  Verdict v;
  double worst = 0.0;
  for (double a : {0.5, 1.0, 2.0}) {
    RandomStream s(101, static_cast<std::uint64_t>(a * 4));
    const auto law = TailLaw::symmetric_weibull(a);
    std::vector<std::size_t> above(4, 0);
    const double thr[] = {0.5, 1.0, 2.0, 3.0};
    for (std::size_t i = 0; i < N; ++i) {
      const double x = std::abs(sample(law, s));
      for (int k = 0; k < 4; ++k) above[k] += x > thr[k];
    }
    for (int k = 0; k < 4; ++k) {
      const double p = std::exp(-std::pow(thr[k], a));
      const double z = std::abs(static_cast<double>(above[k]) / N - p) / sigma(p, N);
      worst = std::max(worst, z);
      if (z > 4.0) v.pass = false;
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 10.0) v.pass = false;
  v.detail = "max |z| " + fmt("%.2f", worst) + ", " + fmt("%.2f", secs) + " s";
  return v;
}

Verdict c02_psi_closed_forms() {
  constexpr std::size_t N = 1000000;
  Verdict v;
  std::uint64_t index = 0;
  auto check = [&](const TailLaw& law, double expect, const std::string& name) {
    RandomStream s(102, index++);
    const auto est = psi_norm_bisection(sample_n(law, s, N), law.alpha());
    const double rel = std::abs(est.value / expect - 1.0);
    if (rel > 0.02) v.pass = false;
    v.detail += name + " " + fmt("%.4f", est.value) + " (" + fmt("%.2f%%", 100 * rel) + ") ";
  };
  for (double a : {0.5, 1.0, 2.0}) check(TailLaw::symmetric_weibull(a), std::pow(2.0, 1.0 / a), "weibull" + fmt("%g", a));
  check(TailLaw::gaussian(), std::sqrt(8.0 / 3.0), "gaussian");
  return v;
}

Verdict c03_moment_growth() {
  Verdict v;
  std::vector<int> ps;
  for (int p = 1; p <= 16; ++p) ps.push_back(p);
  double worst = 0.0, disagreement = 0.0;
  for (double a : {0.5, 1.0, 2.0}) {
    const auto rep = moment_growth_check(TailLaw::symmetric_weibull(a), ps);
    const double K = std::pow(2.0, 1.0 / a);
    for (const auto& e : rep.entries) {
      const double oracle = std::pow(boost::math::tgamma(1.0 + e.p / a), 1.0 / e.p) / (std::pow(e.p, 1.0 / a) * K);
      worst = std::max(worst, oracle);
      disagreement = std::max(disagreement, std::abs(e.ratio / oracle - 1.0));
    }
    if (!rep.within_bound) v.pass = false;
  }
  if (worst > 4.0 || disagreement > 1e-10) v.pass = false;
  v.detail = "max ratio " + fmt("%.4f", worst) + ", library vs Gamma oracle " + fmt("%.1e", disagreement);
  return v;
}

Verdict c04_gamma_oracle() {
  Verdict v;
  RandomStream s(104);
  double lower_gap = 1e300, upper_gap = 1e300;
  for (int k = 0; k < 20; ++k) {
    const int npts = 2 + k % 7;
    Matrix pts(3, npts);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = s.normal();
    const auto t = SetDescriptor::finite(pts);
    for (double a : {0.5, 1.0, 2.0}) {
      const double lo = entropy_lower_bound(t, a);
      const double ex = gamma_exact_small(pts, a).gamma_upper;
      const double hi = dudley_gamma_upper(t, a).gamma_upper;
      lower_gap = std::min(lower_gap, ex - lo);
      upper_gap = std::min(upper_gap, hi - ex);
      if (!(lo <= ex * (1 + 1e-12) && ex <= hi * (1 + 1e-12))) v.pass = false;
    }
  }
  int exact_pairs = 0;
  for (int k = 0; k < 20; ++k) {
    Matrix pts(3, 2);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = s.normal();
    for (double a : {0.5, 1.0, 2.0}) exact_pairs += gamma_exact_small(pts, a).gamma_upper == (pts.col(0) - pts.col(1)).norm();
  }
  if (exact_pairs != 60) v.pass = false;
  v.detail = "min exact-entropy " + fmt("%.3g", lower_gap) + ", min dudley-exact " + fmt("%.3g", upper_gap) +
             ", two-point exact " + std::to_string(exact_pairs) + "/60 (diameter convention)";
  return v;
}

Verdict c05_tail_exponent() {
  Verdict v;
  for (double a : {1.0, 2.0}) {
    const auto spec = row_model(100, 1, standardized_weibull(a));
    const auto c = mc_tail_curve(spec, model_statistic(spec), Matrix::Ones(1, 1), 100000, {}, RandomStream(105, static_cast<std::uint64_t>(a)), workers());
    if (!c.fit) {
      v.pass = false;
      v.detail += "alpha " + fmt("%g", a) + " no fit; ";
      continue;
    }
    if (std::abs(c.fit->exponent - a) > 0.15) v.pass = false;
    v.detail += "alpha " + fmt("%g", a) + " fitted " + fmt("%.3f", c.fit->exponent) + " (r2 " + fmt("%.4f", c.fit->r2) + "); ";
  }
  return v;
}

Verdict c06_gaussian_chi() {
  constexpr std::size_t m = 100, N = 100000;
  const auto spec = row_model(m, 1, TailLaw::gaussian());
  const std::vector<double> thr{0.25, 0.5, 1.0, 1.5, 2.0};
  const auto c = mc_tail_curve(spec, model_statistic(spec), Matrix::Ones(1, 1), N, thr, RandomStream(106), workers());
  Verdict v;
  double worst = 0.0;
  const double root = std::sqrt(static_cast<double>(m));
  for (std::size_t i = 0; i < thr.size(); ++i) {
    const double t = thr[i];
    double p = boost::math::gamma_q(0.5 * m, 0.5 * (root + t) * (root + t));
    if (t < root) p += boost::math::gamma_p(0.5 * m, 0.5 * (root - t) * (root - t));
    const double z = std::abs(c.survival[i] - p) / sigma(p, N);
    worst = std::max(worst, z);
    if (z > 4.0) v.pass = false;
  }
  v.detail = "max |z| " + fmt("%.2f", worst) + " over 5 thresholds";
  return v;
}

Verdict c07_column_m_independence() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr std::size_t n = 16;
  const Matrix net = sample_net(SetDescriptor::unit_sphere(n), 256, RandomStream(107));
  const auto t = SetDescriptor::finite(net);
  const BoundTerms terms{complexity_bracket(t, 2.0).gamma_upper, radius(t)};
  const std::vector<std::size_t> ms{64, 128, 256, 512};
  std::vector<McEstimate> est;
  for (std::size_t m : ms) {
    const auto spec = calibrated_column_model(m, n, ColumnLaw::UniformSphere, 2.0, cal());
    est.push_back(mc_expectation(spec, model_statistic(spec), net, 400, RandomStream(107, m), workers(), terms));
  }
  auto v = ratio_test(ms, est);
  const double secs = seconds_since(t0);
  if (secs >= 300.0) v.pass = false;
  v.detail += "; " + fmt("%.1f", secs) + " s";
  return v;
}

Verdict c08_counterexample() {
  constexpr std::size_t m = 64, N = 10000;
  const auto spec = counterexample_model(m, 1);
  const auto norms = run_trials(N, RandomStream(108), workers(), [&](std::size_t, const RandomStream& rs) {
    return generate(spec, rs).col(0).norm();
  });
  const double root = std::sqrt(static_cast<double>(m));
  double lowest = 1.0;
  for (int k = 0; k <= 64; ++k) {
    const double lambda = root * k / 64.0;
    double hits = 0.0;
    for (double x : norms) hits += std::abs(x - lambda) >= root / 2.0;
    lowest = std::min(lowest, hits / N);
  }
  Verdict v;
  v.pass = lowest >= 0.5 - 4.0 * sigma(0.5, N);
  v.detail = "min frequency over 65 lambdas in [0, 8]: " + fmt("%.4f", lowest);
  return v;
}

Verdict c09_rip() {
  Verdict v;
  RandomStream s(109);
  Matrix g(20, 12);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = s.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix ortho = std::sqrt(20.0) * Matrix(qr.householderQ() * Matrix::Identity(20, 12));
  double worst_ortho = 0.0;
  for (std::size_t k = 1; k <= 12; ++k) worst_ortho = std::max(worst_ortho, rip_constant_exact(ortho, k).delta_s);
  if (worst_ortho > 1e-10) v.pass = false;
  int violations = 0;
  const auto spec = row_model(60, 12, TailLaw::gaussian());
  for (std::uint64_t inst = 0; inst < 50; ++inst) {
    const Matrix a = generate(spec, RandomStream(209, inst));
    for (std::size_t k = 1; k <= 3; ++k) {
      const double exact = rip_constant_exact(a, k).delta_s;
      const double lower = rip_constant_randomized(a, k, 40, RandomStream(309, inst * 4 + k)).delta_s;
      violations += lower > exact;
    }
  }
  if (violations) v.pass = false;
  v.detail = "orthogonal max delta_s " + fmt("%.2e", worst_ortho) + ", randomized > exact in " + std::to_string(violations) +
             "/150";
  return v;
}

Verdict c10_jl() {
  constexpr std::size_t n = 100, npts = 1000;
  RandomStream s(110);
  Matrix g(n, 3);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = s.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix basis = qr.householderQ() * Matrix::Identity(n, 3);
  Matrix coef(3, npts);
  for (Eigen::Index i = 0; i < coef.size(); ++i) coef.data()[i] = s.normal();
  const Matrix pts = basis * coef;
  const auto law = standardized_weibull(1.0);
  const std::size_t m = jl_dim(0.25, 0.05, 1.0, psi_norm(law).value, DesignModel::Row, cal().get("jl_row", 1.0));
  const auto rep = jl_embed_and_score(pts, row_model(m, n, law), 0.25, 20, RandomStream(210), workers());
  double worst_trial = 1.0;
  for (double f : rep.ok_fraction) worst_trial = std::min(worst_trial, f);
  Verdict v;
  v.pass = rep.mean_ok_fraction >= 0.95;
  v.detail = "m=" + std::to_string(m) + ", ok-fraction " + fmt("%.5f", rep.mean_ok_fraction) + " (worst trial " +
             fmt("%.5f", worst_trial) + ")";
  return v;
}

Verdict c11_normalization() {
  constexpr std::size_t n = 32;
  constexpr double a = 1.0;
  const auto law = standardized_weibull(a);
  const double K = psi_norm(law).value;
  const auto m0 = static_cast<std::size_t>(
      std::ceil(cal().get("normalization", a) * calibration_runs::normalization_unit(K, n, a)));
  const double pf = calibration_runs::event_F_probability(row_model(m0, n, law), 10000, RandomStream(111), workers());
  const Matrix net = sample_net(SetDescriptor::unit_sphere(n), 256, RandomStream(211));
  const auto t = SetDescriptor::finite(net);
  const BoundTerms terms{complexity_bracket(t, a).gamma_upper, radius(t)};
  const std::vector<std::size_t> ms{m0, 2 * m0, 4 * m0, 8 * m0};
  std::vector<McEstimate> est;
  for (std::size_t m : ms)
    est.push_back(mc_expectation_normalized(row_model(m, n, law), net, calibration_runs::kScanTrials, RandomStream(311, m), workers(), terms)
                      .deviation);
  auto v = ratio_test(ms, est);
  if (pf < 0.99) v.pass = false;
  v.detail = "m0=" + std::to_string(m0) + " P(F)=" + fmt("%.4f", pf) + ";" + v.detail;
  return v;
}

namespace fs = std::filesystem;

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream is(e.path(), std::ios::binary);
    out[e.path().filename().string()] = {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  }
  return out;
}

int cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "htsk");
  std::vector<const char*> argv;
  for (const auto& x : args) argv.push_back(x.c_str());
  std::ostringstream out, err;
  return cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
}

Verdict c12_determinism() {
  const std::vector<std::vector<std::string>> runs{
      {"sample", "--alpha", "0.5", "--trials", "1000", "--seed", "1"},
      {"psinorm", "--alpha", "1", "--trials", "20000", "--seed", "2"},
      {"gamma", "--set", "sparse", "--n", "32", "--s", "3", "--alpha", "1"},
      {"tails", "--alpha", "1", "--m", "100", "--n", "10", "--trials", "10000", "--seed", "3"},
      {"tails", "--alpha", "2", "--model", "column", "--m", "64", "--n", "8", "--trials", "10000", "--seed", "4"},
      {"hanson-wright", "--alpha", "1", "--trials", "10000", "--seed", "5"},
      {"jl", "--alpha", "1", "--points", "100", "--trials", "4", "--seed", "6"},
      {"rip", "--m", "60", "--n", "12", "--s", "2", "--trials", "8", "--seed", "7"},
      {"normalize", "--alpha", "1", "--n", "16", "--trials", "200", "--net-size", "32", "--seed", "8"},
  };
  const fs::path root = fs::temp_directory_path() / "htsk_acceptance_c12";
  fs::remove_all(root);
  Verdict v;
  int identical = 0;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto d1 = root / std::to_string(k) / "w1", d8 = root / std::to_string(k) / "w8",
               dm = root / std::to_string(k) / "manifest";
    auto a1 = runs[k], a8 = runs[k];
    a1.insert(a1.end(), {"--workers", "1", "-o", d1.string()});
    a8.insert(a8.end(), {"--workers", "8", "-o", d8.string()});
    const int r1 = cli_run(a1), r8 = cli_run(a8);
    const int rm = cli_run({"--config", (d1 / "manifest.json").string(), "--workers", "8", "-o", dm.string()});
    if (r1 || r8 || rm) {
      v.pass = false;
      v.detail += runs[k][0] + " exit " + std::to_string(r1) + "/" + std::to_string(r8) + "/" + std::to_string(rm) + "; ";
      continue;
    }
    const auto c1 = dir_contents(d1);
    if (c1 == dir_contents(d8) && c1 == dir_contents(dm))
      ++identical;
    else {
      v.pass = false;
      v.detail += runs[k][0] + " differs; ";
    }
  }
  v.detail += std::to_string(identical) + "/" + std::to_string(runs.size()) + " runs byte-identical across workers 1, 8 and manifest rerun";
  return v;
}

const std::vector<std::pair<const char*, std::function<Verdict()>>> kCriteria{
    {"exact scalar tails", c01_scalar_tails},
    {"psi closed forms", c02_psi_closed_forms},
    {"moment growth", c03_moment_growth},
    {"gamma exact oracle", c04_gamma_oracle},
    {"tail exponent recovery", c05_tail_exponent},
    {"gaussian chi oracle", c06_gaussian_chi},
    {"column bound m-independence", c07_column_m_independence},
    {"counterexample", c08_counterexample},
    {"rip exactness", c09_rip},
    {"jl end-to-end", c10_jl},
    {"normalization", c11_normalization},
    {"determinism", c12_determinism},
};

bool run_one(std::size_t k) {
  Verdict v;
  try {
    v = kCriteria[k - 1].second();
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail = std::string("exception: ") + e.what();
  }
  std::printf("C%02zu %s %s: %s\n", k, v.pass ? "PASS" : "FAIL", kCriteria[k - 1].first, v.detail.c_str());
  std::fflush(stdout);
  return v.pass;
}

}  // namespace

int main(int argc, char** argv) {
  bool ok = true;
  if (argc > 1) {
    for (int i = 1; i < argc; ++i) {
      const long k = std::strtol(argv[i], nullptr, 10);
      if (k < 1 || k > static_cast<long>(kCriteria.size())) {
        std::fprintf(stderr, "criterion must be 1..%zu\n", kCriteria.size());
        return 2;
      }
      ok = run_one(static_cast<std::size_t>(k)) && ok;
    }
  } else {
    for (std::size_t k = 1; k <= kCriteria.size(); ++k) ok = run_one(k) && ok;
  }
  return ok ? 0 : 1;
}
