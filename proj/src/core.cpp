#include "lcmflow/core.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace lcmflow {

double bilinear(const Grid<double>& g, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(g.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(g.height - 1));
  const int x0 = std::min(static_cast<int>(x), g.width - 2 >= 0 ? g.width - 2 : 0);
  const int y0 = std::min(static_cast<int>(y), g.height - 2 >= 0 ? g.height - 2 : 0);
  const int x1 = std::min(x0 + 1, g.width - 1);
  const int y1 = std::min(y0 + 1, g.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = g.at(x0, y0) + fx * (g.at(x1, y0) - g.at(x0, y0));
  const double bot = g.at(x0, y1) + fx * (g.at(x1, y1) - g.at(x0, y1));
  return top + fy * (bot - top);
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double hash_unit(uint64_t key) {
  return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
}

double normal01(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int worker_count() {
  if (const char* env = std::getenv("LCMFLOW_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace detail {

namespace {
thread_local bool g_inside_parallel = false;
}

void parallel_for_impl(int begin, int end, const std::function<void(int, int)>& run_range) {
  const int n = end - begin;
  if (n <= 0) return;
  const int workers = std::min(g_inside_parallel ? 1 : worker_count(), n);
  if (workers <= 1) {
    run_range(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const int step = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int lo = begin + w * step;
    const int hi = std::min(lo + step, end);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &run_range] {
      g_inside_parallel = true;
      run_range(lo, hi);
      g_inside_parallel = false;
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             const std::vector<double>& x0, const NelderMeadOptions& opt) {
  const size_t dim = x0.size();
  if (dim == 0) throw std::invalid_argument("nelder_mead: empty initial point");

  std::vector<std::vector<double>> verts(dim + 1, x0);
  for (size_t i = 0; i < dim; ++i) {
    const double step = opt.steps.empty() ? 0.1 : opt.steps[i % opt.steps.size()];
    verts[i + 1][i] += step != 0.0 ? step : 0.1;
  }

  int evals = 0;
  std::vector<double> fv(dim + 1);
  for (size_t i = 0; i <= dim; ++i) {
    fv[i] = f(verts[i]);
    ++evals;
  }

  std::vector<size_t> order(dim + 1);
  auto sort_simplex = [&] {
    for (size_t i = 0; i <= dim; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return fv[a] < fv[b]; });
  };

  std::vector<double> centroid(dim), xr(dim), xe(dim), xc(dim);
  bool converged = false;
  while (evals < opt.max_evals) {
    sort_simplex();
    const size_t best = order[0], worst = order[dim], second_worst = order[dim - 1];

    double extent = 0.0;
    for (size_t i = 1; i <= dim; ++i)
      for (size_t d = 0; d < dim; ++d)
        extent = std::max(extent, std::abs(verts[order[i]][d] - verts[best][d]));
    if (extent < opt.x_tol && std::abs(fv[worst] - fv[best]) < opt.f_tol) {
      converged = true;
      break;
    }

    for (size_t d = 0; d < dim; ++d) {
      double s = 0.0;
      for (size_t i = 0; i <= dim; ++i)
        if (i != worst) s += verts[i][d];
      centroid[d] = s / static_cast<double>(dim);
    }

    for (size_t d = 0; d < dim; ++d) xr[d] = centroid[d] + (centroid[d] - verts[worst][d]);
    const double fr = f(xr);
    ++evals;

    if (fr < fv[best]) {
      for (size_t d = 0; d < dim; ++d) xe[d] = centroid[d] + 2.0 * (centroid[d] - verts[worst][d]);
      const double fe = f(xe);
      ++evals;
      if (fe < fr) {
        verts[worst] = xe;
        fv[worst] = fe;
      } else {
        verts[worst] = xr;
        fv[worst] = fr;
      }
    } else if (fr < fv[second_worst]) {
      verts[worst] = xr;
      fv[worst] = fr;
    } else {
      const bool outside = fr < fv[worst];
      const std::vector<double>& base = outside ? xr : verts[worst];
      for (size_t d = 0; d < dim; ++d) xc[d] = centroid[d] + 0.5 * (base[d] - centroid[d]);
      const double fc = f(xc);
      ++evals;
      if (fc < (outside ? fr : fv[worst])) {
        verts[worst] = xc;
        fv[worst] = fc;
      } else {
        // shrink toward the best vertex
        for (size_t i = 0; i <= dim; ++i) {
          if (i == best) continue;
          for (size_t d = 0; d < dim; ++d)
            verts[i][d] = verts[best][d] + 0.5 * (verts[i][d] - verts[best][d]);
          fv[i] = f(verts[i]);
          ++evals;
        }
      }
    }
  }

  sort_simplex();
  NelderMeadResult res;
  res.x = verts[order[0]];
  res.fval = fv[order[0]];
  res.evals = evals;
  res.converged = converged;
  return res;
}

std::string fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("fnv1a_file: cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  char out[32];
  std::snprintf(out, sizeof(out), "fnv1a:%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace lcmflow
