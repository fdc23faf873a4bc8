#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lcmflow {

/// Malformed or missing input data (files, datasets, starved calibration bins).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical failure (optimizer could not produce a usable result).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major raster of scalar samples.
template <typename T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("Grid: dimensions must be positive");
    values.assign(static_cast<size_t>(w) * static_cast<size_t>(h), fill);
  }

  T& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  size_t size() const { return values.size(); }
};

// Bilinear sample with clamped (replicated-border) coordinates.
double bilinear(const Grid<double>& g, double x, double y);

// splitmix64 bit mixer; basis for all procedural hashing.
uint64_t splitmix64(uint64_t x);

// Hash a key into [0, 1).
double hash_unit(uint64_t key);

// Portable uniform [0, 1): 53 mantissa bits straight from the engine, no
// std::uniform_real_distribution (its output is implementation-defined).
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller on uniform01 (portable, deterministic).
double normal01(std::mt19937_64& rng);

// Worker count: LCMFLOW_THREADS env override, else hardware concurrency.
int worker_count();

namespace detail {
void parallel_for_impl(int begin, int end, const std::function<void(int, int)>& run_range);
}

// Runs fn(i) for i in [begin, end). Work is split into contiguous ranges, one
// per worker; nested calls run serially. fn must only write state owned by i.
template <typename Fn>
void parallel_for(int begin, int end, Fn&& fn) {
  detail::parallel_for_impl(begin, end, [&fn](int lo, int hi) {
    for (int i = lo; i < hi; ++i) fn(i);
  });
}

// Sum of term(i) for i in [0, n) accumulated in fixed-size chunks that are
// combined in index order, so the result is bit-identical for any worker count.
template <typename Fn>
double deterministic_sum(size_t n, Fn&& term) {
  constexpr size_t kChunk = 4096;
  const size_t chunks = (n + kChunk - 1) / kChunk;
  if (chunks <= 1) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += term(i);
    return s;
  }
  std::vector<double> partial(chunks, 0.0);
  parallel_for(0, static_cast<int>(chunks), [&](int c) {
    const size_t lo = static_cast<size_t>(c) * kChunk;
    const size_t hi = std::min(lo + kChunk, n);
    double s = 0.0;
    for (size_t i = lo; i < hi; ++i) s += term(i);
    partial[c] = s;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

// ---------------------------------------------------------------------------
// Derivative-free simplex minimizer (Nelder-Mead, standard coefficients).

struct NelderMeadOptions {
  int max_evals = 2000;
  double x_tol = 1e-10;  // max vertex distance from best, per coordinate
  double f_tol = 1e-14;  // spread of simplex function values
  std::vector<double> steps;  // initial simplex step per dimension; 0.1 if empty
};

struct NelderMeadResult {
  std::vector<double> x;
  double fval = 0.0;
  int evals = 0;
  bool converged = false;
};

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             const std::vector<double>& x0,
                             const NelderMeadOptions& opt = {});

// FNV-1a content hash of a file, as "fnv1a:<16 hex digits>".
std::string fnv1a_file(const std::string& path);

}  // namespace lcmflow
