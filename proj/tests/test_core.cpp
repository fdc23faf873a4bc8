#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>

#include "lcmflow/core.hpp"

using namespace lcmflow;

TEST_CASE("bilinear interpolation is exact on linear fields") {
  Grid<double> g(8, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) g.at(x, y) = 2.0 * x - 3.0 * y + 1.0;
  for (int i = 0; i < 50; ++i) {
    const double x = 0.13 * i;
    const double y = 0.09 * i;
    if (x > 7.0 || y > 5.0) break;
    CHECK(bilinear(g, x, y) == doctest::Approx(2.0 * x - 3.0 * y + 1.0).epsilon(1e-12));
  }
  // clamped outside
  CHECK(bilinear(g, -3.0, 0.0) == doctest::Approx(1.0));
  CHECK(bilinear(g, 100.0, 0.0) == doctest::Approx(2.0 * 7 + 1.0));
}

TEST_CASE("hash_unit is deterministic and in range") {
  for (uint64_t k = 0; k < 1000; ++k) {
    const double v = hash_unit(k * 7919u + 3);
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    CHECK(v == hash_unit(k * 7919u + 3));
  }
}

TEST_CASE("deterministic_sum matches serial accumulation for any worker count") {
  const size_t n = 100000;
  auto term = [](size_t i) { return std::sin(0.001 * static_cast<double>(i)); };
  // serial reference with the same chunking
  double expect = 0.0;
  {
    std::vector<double> partial;
    for (size_t lo = 0; lo < n; lo += 4096) {
      double s = 0.0;
      for (size_t i = lo; i < std::min(lo + 4096, n); ++i) s += term(i);
      partial.push_back(s);
    }
    for (double p : partial) expect += p;
  }
  const double got = deterministic_sum(n, term);
  CHECK(got == expect);  // bit-identical
}

TEST_CASE("parallel_for covers the range exactly once") {
  std::vector<int> hits(1000, 0);
  parallel_for(0, 1000, [&](int i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
}

TEST_CASE("nelder_mead minimizes a quadratic bowl") {
  auto f = [](const std::vector<double>& x) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - static_cast<double>(i + 1);
      s += (i + 1) * d * d;
    }
    return s;
  };
  NelderMeadOptions opt;
  opt.max_evals = 4000;
  const NelderMeadResult res = nelder_mead(f, {0.0, 0.0, 0.0}, opt);
  CHECK(res.fval < 1e-12);
  CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(res.x[1] == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(res.x[2] == doctest::Approx(3.0).epsilon(1e-5));
}

TEST_CASE("nelder_mead handles the rosenbrock valley") {
  auto f = [](const std::vector<double>& x) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    return a * a + 100.0 * b * b;
  };
  NelderMeadOptions opt;
  opt.max_evals = 6000;
  const NelderMeadResult res = nelder_mead(f, {-1.2, 1.0}, opt);
  CHECK(res.fval < 1e-10);
}

TEST_CASE("uniform01 is portable and bounded") {
  std::mt19937_64 rng(42);
  std::mt19937_64 rng2(42);
  for (int i = 0; i < 1000; ++i) {
    const double a = uniform01(rng);
    CHECK(a >= 0.0);
    CHECK(a < 1.0);
    CHECK(a == uniform01(rng2));
  }
}
