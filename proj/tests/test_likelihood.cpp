#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "lcmflow/likelihood.hpp"
#include "oracles.hpp"

using namespace lcmflow;

TEST_CASE("lcm_pdf closed-form anchors") {
  CHECK(lcm_pdf(0.0, {0.5, 1.0, 1.0}) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(lcm_pdf(0.0, {0.5, 1.0, 0.0}) == doctest::Approx(1.0 / M_PI).epsilon(1e-14));
  CHECK_THROWS_AS(lcm_pdf(0.0, {1.5, 1.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(lcm_pdf(0.0, {0.5, -1.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(lcm_pdf(0.0, {0.5, 1.0, 1.5}), std::invalid_argument);
}

TEST_CASE("lcm_pdf is symmetric and strictly positive") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const LcmParams p{0.1 + 0.8 * uniform01(rng), 0.01 + 5.0 * uniform01(rng), uniform01(rng)};
    const double x = 20.0 * (uniform01(rng) - 0.5);
    CHECK(lcm_pdf(x, p) == lcm_pdf(-x, p));
    CHECK(lcm_pdf(x, p) > 0.0);
  }
}

TEST_CASE("lcm reduces to pure laplace / cauchy at the weight ends") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const double beta = 0.1 + 0.8 * uniform01(rng);
    const double gamma = 0.01 + 5.0 * uniform01(rng);
    const double x = 10.0 * (uniform01(rng) - 0.5);
    const double rate = std::tan(0.5 * M_PI * beta);
    const double laplace = 0.5 * rate * std::exp(-std::abs(x) * rate);
    const double cauchy = gamma / (M_PI * (gamma * gamma + x * x));
    CHECK(std::abs(lcm_pdf(x, {beta, gamma, 1.0}) - laplace) <= 1e-15);
    CHECK(std::abs(lcm_pdf(x, {beta, gamma, 0.0}) - cauchy) <= 1e-15);
  }
}

TEST_CASE("lcm_pdf integrates to one (quadrature oracle)") {
  for (const LcmParams& p : {LcmParams{0.3, 0.5, 0.6}, LcmParams{0.8, 0.05, 0.2},
                             LcmParams{0.5, 2.0, 1.0}, LcmParams{0.2, 0.01, 0.0}}) {
    CHECK(oracles::lcm_total_mass(p) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("lcm_cdf anchors, symmetry and quadrature consistency") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const LcmParams p{0.1 + 0.8 * uniform01(rng), 0.01 + 3.0 * uniform01(rng), uniform01(rng)};
    CHECK(lcm_cdf(0.0, p) == doctest::Approx(0.5).epsilon(1e-14));
    const double x = 10.0 * (uniform01(rng) - 0.5);
    CHECK(lcm_cdf(-x, p) == doctest::Approx(1.0 - lcm_cdf(x, p)).epsilon(1e-12));
  }
  CHECK(lcm_cdf(1.0, {0.5, 1.0, 0.0}) == doctest::Approx(0.75).epsilon(1e-14));

  // 100 probe points against the quadrature oracle
  const LcmParams p{0.6, 0.1, 0.8};
  for (int i = 0; i < 100; ++i) {
    const double x = -8.0 + 16.0 * i / 99.0;
    CHECK(lcm_cdf(x, p) == doctest::Approx(oracles::lcm_cdf_quadrature(x, p)).epsilon(1e-8));
  }
}

TEST_CASE("lcm_cdf is monotone") {
  const LcmParams p{0.4, 0.2, 0.7};
  double prev = 0.0;
  for (int i = 0; i <= 400; ++i) {
    const double x = -20.0 + 0.1 * i;
    const double f = lcm_cdf(x, p);
    CHECK(f >= prev);
    prev = f;
  }
}

TEST_CASE("confidence halfwidth anchors and defining equation") {
  CHECK(lcm_confidence_halfwidth({0.5, 1.0, 0.0}, 0.5) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(lcm_confidence_halfwidth({0.5, 1.0, 1.0}, 0.9) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-9));
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const LcmParams p{0.1 + 0.8 * uniform01(rng), 0.01 + 3.0 * uniform01(rng), uniform01(rng)};
    const double level = 0.05 + 0.9 * uniform01(rng);
    const double c = lcm_confidence_halfwidth(p, level);
    CHECK(lcm_cdf(c, p) - lcm_cdf(-c, p) == doctest::Approx(level).epsilon(1e-9));
  }
}

TEST_CASE("lut_lookup interpolates in log texture space") {
  ParamLut lut;
  lut.knots = {10.0, 1000.0};
  lut.entries = {{0.3, 0.5, 0.6}, {0.7, 0.1, 0.9}};

  SUBCASE("exact at knots") {
    const LcmParams a = lut_lookup(10.0, lut);
    CHECK(a.beta == 0.3);
    CHECK(a.gamma == 0.5);
    CHECK(a.w_l == 0.6);
    const LcmParams b = lut_lookup(1000.0, lut);
    CHECK(b.beta == 0.7);
  }
  SUBCASE("geometric midpoint gives the arithmetic mean") {
    const LcmParams m = lut_lookup(100.0, lut);  // sqrt(10 * 1000)
    CHECK(m.beta == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.gamma == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(m.w_l == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("clamped outside the knot range") {
    CHECK(lut_lookup(0.001, lut).beta == 0.3);
    CHECK(lut_lookup(1e9, lut).beta == 0.7);
    CHECK(lut_lookup(0.0, lut).beta == 0.3);  // guarded by the texture floor
  }
  SUBCASE("continuity in t") {
    double prev = lut_lookup(5.0, lut).beta;
    for (double lt = std::log10(5.0); lt < 4.0; lt += 0.01) {
      const double cur = lut_lookup(std::pow(10.0, lt), lut).beta;
      CHECK(std::abs(cur - prev) < 0.01);
      prev = cur;
    }
  }
}

TEST_CASE("nll_cost anchors and reference oracle") {
  ParamLut lut;
  lut.knots = {1.0};
  lut.entries = {{0.5, 1.0, 0.0}};

  SUBCASE("single zero sample under pure cauchy costs log pi") {
    TrainingSet data;
    data.push(0.0, 123.0);
    CHECK(nll_cost(lut, data) == doctest::Approx(std::log(M_PI)).epsilon(1e-14));
  }

  SUBCASE("duplicating the data leaves the mean unchanged") {
    TrainingSet data;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 100; ++i) data.push(4.0 * (uniform01(rng) - 0.5), uniform01(rng) * 10);
    const double j1 = nll_cost(lut, data);
    TrainingSet doubled = data;
    for (size_t i = 0; i < 100; ++i) doubled.push(data.z[i], data.t[i]);
    CHECK(nll_cost(lut, doubled) == doctest::Approx(j1).epsilon(1e-14));
  }

  SUBCASE("matches a naive two-loop reference within 1e-12") {
    ParamLut multi;
    multi.knots = {1.0, 50.0, 2000.0};
    multi.entries = {{0.3, 0.4, 0.5}, {0.55, 0.15, 0.8}, {0.8, 0.02, 0.9}};
    TrainingSet data;
    std::mt19937_64 rng(6);
    for (int i = 0; i < 1000; ++i) {
      data.push(10.0 * (uniform01(rng) - 0.5),
                std::pow(10.0, 4.0 * uniform01(rng) - 1.0));
    }
    double ref = 0.0;
    for (size_t i = 0; i < data.size(); ++i)
      ref -= std::log(lcm_pdf(data.z[i], lut_lookup(data.t[i], multi)));
    ref /= static_cast<double>(data.size());
    CHECK(std::abs(nll_cost(multi, data) - ref) < 1e-12);
  }

  SUBCASE("empty data is rejected") {
    CHECK_THROWS_AS(nll_cost(lut, TrainingSet{}), std::invalid_argument);
  }
}

TEST_CASE("fit_lut recovers a known single-texture mixture") {
  const LcmParams truth{0.6, 0.1, 0.8};
  const std::vector<double> z = oracles::sample_lcm(truth, 20000, 99);
  TrainingSet data;
  for (double zi : z) data.push(zi, 40.0);

  FitOptions options;
  options.restarts = 3;
  FitReport report;
  const ParamLut lut = fit_lut(data, {40.0}, options, &report);
  REQUIRE(lut.entries.size() == 1);
  CHECK(std::abs(lut.entries[0].beta - truth.beta) < 0.05);
  CHECK(std::abs(lut.entries[0].w_l - truth.w_l) < 0.05);
  CHECK(std::abs(lut.entries[0].gamma - truth.gamma) / truth.gamma < 0.10);
  CHECK(report.j_final <= report.j_init + 1e-12);

  // fitted cost beats or matches the generating parameters
  ParamLut truth_lut;
  truth_lut.knots = {40.0};
  truth_lut.entries = {truth};
  CHECK(nll_cost(lut, data) <= nll_cost(truth_lut, data) + 1e-3);

  // goodness of fit of the recovered density
  const LcmParams fitted = lut.entries[0];
  const double ks = ks_statistic(z, [&fitted](double x) { return lcm_cdf(x, fitted); });
  CHECK(ks < 0.02);
}

TEST_CASE("fit_lut separates two texture populations on two knots") {
  const LcmParams low_truth{0.35, 0.6, 0.65};
  const LcmParams high_truth{0.75, 0.04, 0.9};
  TrainingSet data;
  for (double z : oracles::sample_lcm(low_truth, 20000, 7)) data.push(z, 10.0);
  for (double z : oracles::sample_lcm(high_truth, 20000, 8)) data.push(z, 1000.0);

  FitOptions options;
  options.restarts = 2;
  options.joint_evals_per_dim = 120;
  const ParamLut lut = fit_lut(data, {10.0, 1000.0}, options, nullptr);
  REQUIRE(lut.entries.size() == 2);
  CHECK(std::abs(lut.entries[0].beta - low_truth.beta) < 0.05);
  CHECK(std::abs(lut.entries[0].w_l - low_truth.w_l) < 0.05);
  CHECK(std::abs(lut.entries[0].gamma - low_truth.gamma) / low_truth.gamma < 0.10);
  CHECK(std::abs(lut.entries[1].beta - high_truth.beta) < 0.05);
  CHECK(std::abs(lut.entries[1].w_l - high_truth.w_l) < 0.05);
  CHECK(std::abs(lut.entries[1].gamma - high_truth.gamma) / high_truth.gamma < 0.10);
}

TEST_CASE("fit_lut reports starved knots") {
  TrainingSet data;
  for (int i = 0; i < 50; ++i) data.push(0.1 * i, 10.0);
  CHECK_THROWS_AS(fit_lut(data, {10.0}, FitOptions{}), DataError);

  // one healthy knot, one starved: starved one is dropped and reported
  for (int i = 0; i < 200; ++i) data.push(0.01 * i - 1.0, 10.0);
  FitReport report;
  const ParamLut lut = fit_lut(data, {10.0, 1e6}, FitOptions{}, &report);
  CHECK(lut.knots.size() == 1);
  REQUIRE(report.dropped_knots.size() == 1);
  CHECK(report.dropped_knots[0] == 1e6);
}

TEST_CASE("ks_statistic anchors") {
  SUBCASE("single sample at the median") {
    CHECK(ks_statistic({0.0}, [](double x) { return x < 0 ? 0.25 : 0.5; }) ==
          doctest::Approx(0.5));
  }
  SUBCASE("quantile grid approaches zero") {
    const int n = 2000;
    std::vector<double> samples;
    for (int i = 1; i <= n; ++i) samples.push_back(static_cast<double>(i) / (n + 1));
    const double d = ks_statistic(samples, [](double x) { return std::clamp(x, 0.0, 1.0); });
    CHECK(d <= 1.0 / (n + 1) + 1e-12);
  }
  SUBCASE("invariant under strictly increasing transforms") {
    std::mt19937_64 rng(9);
    std::vector<double> samples;
    for (int i = 0; i < 500; ++i) samples.push_back(normal01(rng));
    const double d1 = ks_statistic(samples, [](double x) { return gaussian_cdf(x, 1.0); });
    std::vector<double> mapped(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) mapped[i] = std::exp(samples[i]);
    const double d2 = ks_statistic(
        mapped, [](double x) { return gaussian_cdf(std::log(std::max(x, 1e-300)), 1.0); });
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-12));
  }
  SUBCASE("empty sample is rejected") {
    CHECK_THROWS_AS(ks_statistic({}, [](double) { return 0.5; }), std::invalid_argument);
  }
}

TEST_CASE("gaussian baseline recovers sigma within 2 percent") {
  std::mt19937_64 rng(10);
  std::vector<double> z(100000);
  for (double& v : z) v = 2.0 * normal01(rng);
  const GaussianFit fit = fit_gaussian_zero_mean(z);
  CHECK_FALSE(fit.degenerate);
  CHECK(std::abs(fit.sigma - 2.0) / 2.0 < 0.02);
}

TEST_CASE("gaussian fits cauchy data far worse than the lcm does") {
  const LcmParams cauchy{0.5, 0.5, 0.0};
  const std::vector<double> z = oracles::sample_lcm(cauchy, 20000, 11);
  const GaussianFit g = fit_gaussian_zero_mean(z);
  const double ks_gauss = ks_statistic(z, [&g](double x) { return gaussian_cdf(x, g.sigma); });

  TrainingSet data;
  for (double zi : z) data.push(zi, 5.0);
  FitOptions options;
  options.restarts = 2;
  const ParamLut lut = fit_lut(data, {5.0}, options, nullptr);
  const LcmParams fitted = lut.entries[0];
  const double ks_lcm = ks_statistic(z, [&fitted](double x) { return lcm_cdf(x, fitted); });
  CHECK(ks_lcm < 0.02);
  CHECK(ks_gauss > 5.0 * ks_lcm);
}

TEST_CASE("degenerate all-zero bins are flagged") {
  const std::vector<double> zeros(200, 0.0);
  CHECK(fit_gaussian_zero_mean(zeros).degenerate);
  CHECK(fit_log_logistic_magnitude(zeros).degenerate);
}

TEST_CASE("log-logistic magnitude fit recovers its own samples") {
  // inverse-CDF sampling: x = a * (u/(1-u))^(1/b)
  std::mt19937_64 rng(12);
  const double a = 0.25, b = 2.5;
  std::vector<double> z(30000);
  for (double& v : z) {
    const double u = uniform01(rng);
    v = a * std::pow(u / (1.0 - u + 1e-300), 1.0 / b);
  }
  const LogLogisticFit fit = fit_log_logistic_magnitude(z);
  CHECK_FALSE(fit.degenerate);
  CHECK(std::abs(fit.scale - a) / a < 0.05);
  CHECK(std::abs(fit.shape - b) / b < 0.05);
  const double ks = ks_statistic(z, [&fit](double x) { return log_logistic_cdf(x, fit); });
  CHECK(ks < 0.02);
}

TEST_CASE("param lut json round trip preserves knots exactly") {
  ParamLut lut;
  lut.knots = {2.5, 80.0, 3200.0};
  lut.entries = {{0.31, 0.41, 0.59}, {0.62, 0.08, 0.83}, {0.79, 0.02, 0.91}};
  const std::string path =
      (std::filesystem::temp_directory_path() / "lcmflow_lut_test.json").string();
  lut.save_json(path);
  const ParamLut back = ParamLut::load_json(path);
  REQUIRE(back.knots.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back.knots[i] == lut.knots[i]);
    CHECK(back.entries[i].beta == lut.entries[i].beta);
    CHECK(back.entries[i].gamma == lut.entries[i].gamma);
    CHECK(back.entries[i].w_l == lut.entries[i].w_l);
    const LcmParams q = lut_lookup(lut.knots[i], back);
    CHECK(q.beta == lut.entries[i].beta);
  }
  std::filesystem::remove(path);
}

TEST_CASE("param lut json loading rejects malformed tables") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "lcmflow_lut_bad.json").string();
  {
    std::ofstream out(path);
    out << "{\"knots\": [5.0, 1.0], \"entries\": [{\"beta\":0.5,\"gamma\":1.0,\"w_l\":0.5},"
           "{\"beta\":0.5,\"gamma\":1.0,\"w_l\":0.5}]}";
  }
  CHECK_THROWS_AS(ParamLut::load_json(path), DataError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(ParamLut::load_json("/nonexistent/lut.json"), DataError);
}
