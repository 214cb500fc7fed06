#include "htsk/calibration.hpp"
#include "htsk/tail_distributions.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

using namespace htsk;

namespace {

// Root of a decreasing function by bracketing bisection to full precision.
double solve_decreasing(const std::function<double(double)>& f, double lo, double hi) {
  auto r = boost::math::tools::bisect(f, lo, hi, boost::math::tools::eps_tolerance<double>(50));
  return 0.5 * (r.first + r.second);
}

double binomial_sigma(double p, double n) { return std::sqrt(p * (1.0 - p) / n); }

double empirical_survival(const std::vector<double>& xs, double t) {
  double c = 0.0;
  for (double x : xs) c += std::abs(x) > t;
  return c / static_cast<double>(xs.size());
}

}  // namespace

TEST(TailLaw, RejectsAlphaOutsideRange) {
  for (double a : {0.0, -1.0, 2.5, std::nan("")}) EXPECT_THROW(TailLaw::symmetric_weibull(a), std::invalid_argument);
  EXPECT_THROW(TailLaw::gaussian(0.0), std::invalid_argument);
  EXPECT_THROW(TailLaw::custom_empirical({}, 1.0), std::invalid_argument);
  EXPECT_NO_THROW(TailLaw::symmetric_weibull(2.0));
}

TEST(Sample, WeibullTailAtTwo) {
  RandomStream s(2024);
  const auto xs = sample_n(TailLaw::symmetric_weibull(1.0), s, 1000000);
  const double p = std::exp(-2.0);
  EXPECT_NEAR(empirical_survival(xs, 2.0), p, 3.0 * binomial_sigma(p, 1e6));
}

TEST(Sample, WeibullDrawIsSignTimesExponentialRoot) {
  RandomStream s(8), replay(8);
  const auto law = TailLaw::symmetric_weibull(0.5);
  for (int i = 0; i < 100; ++i) {
    const double x = sample(law, s);
    const double sign = replay.sign();
    const double e = replay.exponential();
    ASSERT_EQ(x, sign * std::pow(e, 2.0));
  }
}

TEST(Sample, EveryLawHasFullSupportAtZero) {
  for (const auto& law : {TailLaw::symmetric_weibull(1.0), TailLaw::gaussian(), TailLaw::rademacher(),
                          TailLaw::uniform(), TailLaw::custom_empirical({1.0, 2.0}, 1.0)}) {
    RandomStream s(3);
    EXPECT_EQ(empirical_survival(sample_n(law, s, 100000), 0.0), 1.0) << to_string(law.family());
  }
}

TEST(Sample, RademacherSupportAndMean) {
  RandomStream s(77);
  const auto xs = sample_n(TailLaw::rademacher(), s, 1000000);
  CompensatedSum sum;
  for (double x : xs) {
    ASSERT_TRUE(x == 1.0 || x == -1.0);
    sum.add(x);
  }
  EXPECT_LE(std::abs(sum.value() / 1e6), 4.0 / std::sqrt(1e6));
}

TEST(Sample, ExactTailsAcrossAlpha) {
  for (double a : {0.5, 1.0, 2.0}) {
    RandomStream s(100 + static_cast<std::uint64_t>(4 * a));
    const auto xs = sample_n(TailLaw::symmetric_weibull(a), s, 1000000);
    for (double t : {0.5, 1.0, 2.0, 3.0}) {
      const double p = std::exp(-std::pow(t, a));
      EXPECT_NEAR(empirical_survival(xs, t), p, 4.0 * binomial_sigma(p, 1e6)) << "alpha " << a << " t " << t;
    }
  }
}

TEST(Standardize, GammaMomentOracle) {
  EXPECT_EQ(standardize(TailLaw::gaussian()).scale(), 1.0);
  EXPECT_NEAR(standardize(TailLaw::symmetric_weibull(2.0)).scale(), 1.0, 1e-15);
  EXPECT_NEAR(standardize(TailLaw::symmetric_weibull(1.0)).scale(), 1.0 / std::sqrt(2.0), 1e-15);
  for (double a : {0.5, 0.8, 1.3, 2.0}) {
    const double oracle = 1.0 / std::sqrt(boost::math::tgamma(2.0 / a + 1.0));
    EXPECT_NEAR(standardize(TailLaw::symmetric_weibull(a)).scale(), oracle, 1e-13 * oracle);
  }
  EXPECT_NEAR(standardize(TailLaw::uniform(5.0)).variance(), 1.0, 1e-14);
  EXPECT_NEAR(standardize(TailLaw::custom_empirical({1.0, 3.0}, 2.0)).variance(), 1.0, 1e-14);
}

TEST(Standardize, EmpiricalVarianceIsOne) {
  RandomStream s(31);
  const auto xs = sample_n(standardize(TailLaw::symmetric_weibull(1.0)), s, 1000000);
  CompensatedSum sq;
  for (double x : xs) sq.add(x * x);
  // Var(X^2) = E X^4 - 1 = Gamma(5)/Gamma(3)^2 - 1 = 5
  EXPECT_NEAR(sq.value() / 1e6, 1.0, 4.0 * std::sqrt(5.0 / 1e6));
}

TEST(PsiClosedForm, KnownValues) {
  const auto w1 = psi_norm_closed_form(TailLaw::symmetric_weibull(1.0));
  EXPECT_DOUBLE_EQ(w1.value, 2.0);
  EXPECT_EQ(w1.ci_low, w1.value);
  EXPECT_EQ(w1.ci_high, w1.value);
  EXPECT_EQ(w1.method, PsiMethod::ClosedForm);
  EXPECT_DOUBLE_EQ(psi_norm_closed_form(TailLaw::symmetric_weibull(2.0)).value, std::sqrt(2.0));
  EXPECT_NEAR(psi_norm_closed_form(TailLaw::gaussian()).value, 1.63299316185545, 1e-13);
  EXPECT_DOUBLE_EQ(psi_norm_closed_form(TailLaw::symmetric_weibull(1.0, 3.0)).value, 6.0);
}

TEST(PsiClosedForm, UnsupportedFamilies) {
  EXPECT_THROW(psi_norm_closed_form(TailLaw::uniform()), NoClosedForm);
  EXPECT_THROW(psi_norm_closed_form(TailLaw::gaussian(1.0, 1.0)), NoClosedForm);
}

// The closed forms satisfy E exp(|X/t|^alpha) = 2 when the MGF is evaluated by
// numerical quadrature against the density.
TEST(PsiClosedForm, QuadratureConfirmsWeibull) {
  boost::math::quadrature::tanh_sinh<double> integrator;
  for (double a : {0.5, 1.0, 2.0}) {
    const double t = psi_norm_closed_form(TailLaw::symmetric_weibull(a)).value;
    // |X|^a = E ~ Exp(1): E exp(E / t^a) = int_0^1 exp(-log(v) / t^a) dv with v = exp(-E)
    const double mgf = integrator.integrate([&](double v) { return std::exp(-std::log(v) / std::pow(t, a)); }, 0.0, 1.0);
    EXPECT_NEAR(mgf, 2.0, 1e-6) << "alpha " << a;
  }
}

TEST(PsiMomentSeries, MatchesClosedForms) {
  for (double a : {0.5, 1.0, 1.5, 2.0}) {
    const auto law = TailLaw::symmetric_weibull(a);
    EXPECT_NEAR(psi_norm_moment_series(law).value, std::pow(2.0, 1.0 / a), 1e-9) << a;
  }
  EXPECT_NEAR(psi_norm_moment_series(TailLaw::gaussian()).value, std::sqrt(8.0 / 3.0), 1e-9);
  EXPECT_NEAR(psi_norm_moment_series(TailLaw::rademacher(1.0, 1.0)).value, 1.0 / std::numbers::ln2, 1e-9);
}

TEST(PsiMomentSeries, UniformAgainstQuadratureRoot) {
  boost::math::quadrature::tanh_sinh<double> integrator;
  auto excess = [&](double t) {
    return integrator.integrate([t](double u) { return std::exp(u * u / (t * t)); }, 0.0, 1.0) - 2.0;
  };
  const double oracle = solve_decreasing(excess, 0.5, 2.0);
  EXPECT_NEAR(psi_norm(TailLaw::uniform(1.0, 2.0)).value, oracle, 1e-9);
  EXPECT_NEAR(psi_norm(TailLaw::uniform(3.0, 2.0)).value, 3.0 * oracle, 3e-9);
}

TEST(PsiMomentSeries, GaussianAtAlphaOneAgainstMgfRoot) {
  // E exp(|X|/t) = 2 exp(1/(2t^2)) Phi(1/t)
  const boost::math::normal phi;
  auto excess = [&](double t) { return 2.0 * std::exp(0.5 / (t * t)) * boost::math::cdf(phi, 1.0 / t) - 2.0; };
  const double oracle = solve_decreasing(excess, 0.3, 10.0);
  EXPECT_NEAR(psi_norm(TailLaw::gaussian(1.0, 1.0)).value, oracle, 1e-9);
}

TEST(PsiNorm, EmpiricalLawAgainstDirectRoot) {
  const std::vector<double> support{1.0, 2.0, 3.0};
  auto excess = [&](double t) {
    double m = 0.0;
    for (double z : support) m += std::exp(z * z / (t * t));
    return m / 3.0 - 2.0;
  };
  const double oracle = solve_decreasing(excess, 0.5, 20.0);
  EXPECT_NEAR(psi_norm(TailLaw::custom_empirical(support, 2.0)).value, oracle, 1e-9);
}

TEST(PsiBisection, WeibullAndGaussianWithinTwoPercent) {
  RandomStream s(555);
  const auto w = sample_n(TailLaw::symmetric_weibull(1.0), s, 1000000);
  const auto est = psi_norm_bisection(w, 1.0);
  EXPECT_NEAR(est.value, 2.0, 0.04);
  EXPECT_LE(est.ci_low, est.value);
  EXPECT_GE(est.ci_high, est.value);
  EXPECT_EQ(est.sample_count, 1000000u);
  EXPECT_EQ(est.method, PsiMethod::BisectionMgf);

  const auto g = sample_n(TailLaw::gaussian(), s, 1000000);
  EXPECT_NEAR(psi_norm_bisection(g, 2.0).value, std::sqrt(8.0 / 3.0), 0.02 * std::sqrt(8.0 / 3.0));
}

TEST(PsiBisection, ZerosGiveZero) {
  const std::vector<double> zeros(10000, 0.0);
  const auto est = psi_norm_bisection(zeros, 1.0);
  EXPECT_EQ(est.value, 0.0);
  EXPECT_EQ(est.ci_low, 0.0);
  EXPECT_EQ(est.ci_high, 0.0);
}

TEST(PsiBisection, Errors) {
  EXPECT_THROW(psi_norm_bisection(std::vector<double>{}, 1.0), std::invalid_argument);
  EXPECT_THROW(psi_norm_bisection(std::vector<double>(9999, 1.0), 1.0), std::invalid_argument);
  EXPECT_THROW(psi_norm_bisection(std::vector<double>(10000, 1.0), 3.0), std::invalid_argument);
  RandomStream s(4);
  const auto xs = sample_n(TailLaw::gaussian(), s, 10000);
  try {
    psi_norm_bisection(xs, 2.0, PsiBracket{0.1, 0.5});
    FAIL() << "expected NormAboveBracket";
  } catch (const NormAboveBracket& e) {
    EXPECT_EQ(e.lo(), 0.1);
    EXPECT_EQ(e.hi(), 0.5);
  }
}

TEST(PsiBisection, ConstantSequenceIsExact) {
  // mean exp(|c/t|^alpha) = exp((c/t)^alpha) = 2 at t = c / (ln 2)^(1/alpha)
  const std::vector<double> xs(10000, 3.0);
  EXPECT_NEAR(psi_norm_bisection(xs, 1.0).value, 3.0 / std::numbers::ln2, 1e-4 * 3.0 / std::numbers::ln2);
}

TEST(PsiBisection, Deterministic) {
  auto run = [] {
    RandomStream s(99);
    return psi_norm_bisection(sample_n(TailLaw::symmetric_weibull(0.5), s, 20000), 0.5);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.ci_low, b.ci_low);
  EXPECT_EQ(a.ci_high, b.ci_high);
}

TEST(PsiBisection, IntervalBracketsHeavyTailEstimate) {
  RandomStream s(12);
  const auto xs = sample_n(TailLaw::symmetric_weibull(0.5), s, 100000);
  const auto est = psi_norm_bisection(xs, 0.5);
  EXPECT_LE(est.ci_low, est.value);
  EXPECT_GE(est.ci_high, est.value);
  EXPECT_GT(est.ci_low, 0.8 * est.value);
  EXPECT_LT(est.ci_high, 1.25 * est.value);
}

// P(|X| >= t) <= 2 exp(-(t/K)^alpha) by Markov's inequality on exp(|X/K|^alpha).
TEST(PsiNorm, TailRoundTrip) {
  const std::vector<TailLaw> laws{standardize(TailLaw::symmetric_weibull(0.5)), standardize(TailLaw::symmetric_weibull(1.0)),
                                  TailLaw::gaussian(), TailLaw::uniform(), TailLaw::rademacher(),
                                  TailLaw::gaussian(1.0, 1.0)};
  for (const auto& law : laws) {
    const double K = psi_norm(law).value;
    RandomStream s(21);
    const auto xs = sample_n(law, s, 200000);
    for (double t : {0.25, 0.5, 1.0, 2.0, 3.0, 5.0}) {
      const double env = std::min(1.0, 2.0 * std::exp(-std::pow(t / K, law.alpha())));
      double c = 0.0;
      for (double x : xs) c += std::abs(x) >= t;
      EXPECT_LE(c / 2e5, env + 4.0 * binomial_sigma(env, 2e5)) << to_string(law.family()) << " t " << t;
    }
  }
}

TEST(PsiNorm, PsiOneBelowFrozenMultipleOfPsiTwo) {
  const double C = load_calibration().get("psi_monotone", 2.0);
  RandomStream root(777);
  for (std::uint64_t r = 0; r < 5; ++r) {
    RandomStream s = root.substream(r);
    const auto xs = sample_n(TailLaw::symmetric_weibull(2.0), s, 10000);
    EXPECT_LE(psi_norm_bisection(xs, 1.0).value, C * psi_norm_bisection(xs, 2.0).value);
  }
}

TEST(MomentGrowth, GammaMomentExamples) {
  const std::vector<int> p2{2};
  const auto r1 = moment_growth_check(TailLaw::symmetric_weibull(1.0), p2);
  EXPECT_NEAR(r1.entries[0].lp_norm, std::sqrt(2.0), 1e-14);
  EXPECT_NEAR(r1.entries[0].ratio, std::sqrt(2.0) / 4.0, 1e-14);

  const std::vector<int> p4{4};
  const auto r2 = moment_growth_check(TailLaw::symmetric_weibull(2.0), p4);
  EXPECT_NEAR(r2.entries[0].lp_norm, std::pow(2.0, 0.25), 1e-14);
  EXPECT_NEAR(r2.entries[0].ratio, std::pow(2.0, 0.25) / (2.0 * std::sqrt(2.0)), 1e-14);
}

TEST(MomentGrowth, AllRatiosBelowFour) {
  std::vector<int> ps;
  for (int p = 1; p <= 16; ++p) ps.push_back(p);
  for (const auto& law : {TailLaw::symmetric_weibull(0.5), TailLaw::symmetric_weibull(1.0),
                          TailLaw::symmetric_weibull(2.0), TailLaw::gaussian(), TailLaw::uniform(),
                          TailLaw::rademacher()}) {
    const auto rep = moment_growth_check(law, ps);
    EXPECT_TRUE(rep.within_bound);
    for (const auto& e : rep.entries) {
      EXPECT_GE(e.ratio, 0.0);
      EXPECT_LE(e.ratio, 4.0);
    }
  }
  const std::vector<int> bad{0};
  EXPECT_THROW(moment_growth_check(TailLaw::gaussian(), bad), std::invalid_argument);
}

TEST(QuasiNorm, SlackFactor) {
  EXPECT_EQ(quasi_norm_slack(1.0), 1.0);
  EXPECT_EQ(quasi_norm_slack(2.0), 1.0);
  EXPECT_DOUBLE_EQ(quasi_norm_slack(0.5), 2.0);
  EXPECT_DOUBLE_EQ(psi_arith::sum_bound(1.0, 2.0, 0.5), 6.0);
}

// Sum of two independent Weibull(1/2) variables stays within the quasi-norm
// triangle bound.
TEST(QuasiNorm, SumOfIndependentWeibulls) {
  RandomStream s(61);
  const auto law = TailLaw::symmetric_weibull(0.5);
  std::vector<double> z(200000);
  for (double& v : z) v = sample(law, s) + sample(law, s);
  const double K = psi_norm(law).value;
  EXPECT_LE(psi_norm_bisection(z, 0.5).value, psi_arith::sum_bound(K, K, 0.5));
}
