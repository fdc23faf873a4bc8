#include "lcmflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace lcmflow {

void save_flow_field(const FlowField& field, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_flow_field: cannot open " + path + " for writing");
  out.write("FLF1", 4);
  const uint32_t count = static_cast<uint32_t>(field.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  std::vector<char> rec(field.size() * 17);
  char* p = rec.data();
  for (size_t i = 0; i < field.size(); ++i) {
    const float vals[4] = {static_cast<float>(field.x[i]), static_cast<float>(field.y[i]),
                           static_cast<float>(field.dx[i]), static_cast<float>(field.dy[i])};
    std::memcpy(p, vals, 16);
    p[16] = static_cast<char>(field.valid[i]);
    p += 17;
  }
  out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  if (!out) throw DataError("save_flow_field: write failed for " + path);
}

FlowField load_flow_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_flow_field: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "FLF1", 4) != 0)
    throw DataError("load_flow_field: bad magic in " + path);
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);
  std::vector<char> rec(static_cast<size_t>(count) * 17);
  in.read(rec.data(), static_cast<std::streamsize>(rec.size()));
  if (in.gcount() != static_cast<std::streamsize>(rec.size()))
    throw DataError("load_flow_field: truncated data in " + path);
  FlowField field;
  field.reserve(count);
  const char* p = rec.data();
  for (uint32_t i = 0; i < count; ++i) {
    float vals[4];
    std::memcpy(vals, p, 16);
    field.push(vals[0], vals[1], vals[2], vals[3], p[16] != 0);
    p += 17;
  }
  return field;
}

void LkParams::validate() const {
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("LkParams: window must be odd and >= 3");
  if (max_level < 0) throw std::invalid_argument("LkParams: max_level must be >= 0");
  if (max_iters < 1) throw std::invalid_argument("LkParams: max_iters must be >= 1");
  if (!(eps > 0.0)) throw std::invalid_argument("LkParams: eps must be positive");
}

std::vector<Image> build_pyramid(const Image& img, int levels) {
  if (levels < 1) throw std::invalid_argument("build_pyramid: need at least one level");
  std::vector<Image> pyr;
  pyr.reserve(levels);
  pyr.push_back(img);
  // 5-tap Gaussian, sigma 1.0
  double wts[5];
  double total = 0.0;
  for (int k = -2; k <= 2; ++k) {
    wts[k + 2] = std::exp(-0.5 * k * k);
    total += wts[k + 2];
  }
  for (double& v : wts) v /= total;

  for (int level = 1; level < levels; ++level) {
    const Image& src = pyr.back();
    const int w = src.width, h = src.height;
    if (w / 2 < 8 || h / 2 < 8)
      throw std::invalid_argument("build_pyramid: too many levels for image size");
    Grid<double> blur_h(w, h), blur(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = -2; k <= 2; ++k) s += wts[k + 2] * src.at(std::clamp(x + k, 0, w - 1), y);
        blur_h.at(x, y) = s;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = -2; k <= 2; ++k) s += wts[k + 2] * blur_h.at(x, std::clamp(y + k, 0, h - 1));
        blur.at(x, y) = s;
      }
    Image down(w / 2, h / 2);
    for (int y = 0; y < down.height; ++y)
      for (int x = 0; x < down.width; ++x) down.at(x, y) = blur.at(2 * x, 2 * y);
    pyr.push_back(std::move(down));
  }
  return pyr;
}

namespace {

constexpr double kMinEigenvalue = 1e-4;  // per-pixel-normalized tensor guard

struct PyramidPair {
  std::vector<Image> prev, next;
  std::vector<Grid<double>> prev_gx, prev_gy;
};

PyramidPair prepare_pyramids(const Image& prev, const Image& next, const LkParams& params) {
  PyramidPair pp;
  pp.prev = build_pyramid(prev, params.max_level + 1);
  pp.next = build_pyramid(next, params.max_level + 1);
  for (const Image& img : pp.prev) {
    auto [gx, gy] = gradients(img);
    pp.prev_gx.push_back(std::move(gx));
    pp.prev_gy.push_back(std::move(gy));
  }
  return pp;
}

struct TrackResult {
  double dx = 0.0, dy = 0.0;
  bool ok = false;
};

// Fill a window patch around a fractional center. Uses direct loads when the
// whole window sits on interior integer coordinates, clamped bilinear
// otherwise; the bilinear corner weights are shared by every window sample.
void sample_patch(const Grid<double>& g, double cx, double cy, int r, double* out) {
  const int w = g.width, h = g.height;
  const double fcx = std::floor(cx);
  const double fcy = std::floor(cy);
  const int ix = static_cast<int>(fcx);
  const int iy = static_cast<int>(fcy);
  const double fx = cx - fcx;
  const double fy = cy - fcy;
  const int window = 2 * r + 1;

  if (fx == 0.0 && fy == 0.0 && ix - r >= 0 && ix + r < w && iy - r >= 0 && iy + r < h) {
    for (int oy = -r; oy <= r; ++oy) {
      const double* row = &g.values[static_cast<size_t>(iy + oy) * w + (ix - r)];
      for (int ox = 0; ox < window; ++ox) *out++ = row[ox];
    }
    return;
  }
  if (ix - r >= 0 && ix + r + 1 < w && iy - r >= 0 && iy + r + 1 < h) {
    const double w00 = (1.0 - fx) * (1.0 - fy);
    const double w10 = fx * (1.0 - fy);
    const double w01 = (1.0 - fx) * fy;
    const double w11 = fx * fy;
    for (int oy = -r; oy <= r; ++oy) {
      const double* row0 = &g.values[static_cast<size_t>(iy + oy) * w + (ix - r)];
      const double* row1 = row0 + w;
      for (int ox = 0; ox < window; ++ox)
        *out++ = w00 * row0[ox] + w10 * row0[ox + 1] + w01 * row1[ox] + w11 * row1[ox + 1];
    }
    return;
  }
  for (int oy = -r; oy <= r; ++oy)
    for (int ox = -r; ox <= r; ++ox) *out++ = bilinear(g, cx + ox, cy + oy);
}

// Coarse-to-fine solve for one point. keep_low_texture emits a result even
// when every level's tensor is below the guard (dense mode).
TrackResult track_point(const PyramidPair& pp, const Eigen::Vector2d& point,
                        const LkParams& params, bool keep_low_texture,
                        std::vector<double>& scratch) {
  const int r = params.window / 2;
  const int levels = params.max_level + 1;
  double dx = 0.0, dy = 0.0;
  bool any_textured = false;
  bool out_of_bounds = false;

  const size_t patch = static_cast<size_t>(params.window) * params.window;
  scratch.resize(4 * patch);
  double* pgx = scratch.data();
  double* pgy = pgx + patch;
  double* pint = pgy + patch;
  double* pnext = pint + patch;

  for (int level = levels - 1; level >= 0; --level) {
    const double scale = 1.0 / static_cast<double>(1 << level);
    const double cx = point.x() * scale;
    const double cy = point.y() * scale;
    const Image& next = pp.next[level];
    if (level < levels - 1) {
      dx *= 2.0;
      dy *= 2.0;
    }

    // window tensor and template patch; gradient positions are fixed per level
    sample_patch(pp.prev_gx[level], cx, cy, r, pgx);
    sample_patch(pp.prev_gy[level], cx, cy, r, pgy);
    sample_patch(pp.prev[level], cx, cy, r, pint);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (size_t i = 0; i < patch; ++i) {
      sxx += pgx[i] * pgx[i];
      sxy += pgx[i] * pgy[i];
      syy += pgy[i] * pgy[i];
    }
    const double n = static_cast<double>(patch);
    sxx /= n;
    sxy /= n;
    syy /= n;
    // smaller eigenvalue of the normalized tensor
    const double mean = 0.5 * (sxx + syy);
    const double rad = std::hypot(0.5 * (sxx - syy), sxy);
    if (mean - rad < kMinEigenvalue) continue;  // no update possible at this level
    any_textured = true;

    const double det = sxx * syy - sxy * sxy;
    if (det <= 0.0) continue;
    const double i11 = syy / det, i12 = -sxy / det, i22 = sxx / det;

    for (int iter = 0; iter < params.max_iters; ++iter) {
      sample_patch(next, cx + dx, cy + dy, r, pnext);
      double bx = 0.0, by = 0.0;
      for (size_t i = 0; i < patch; ++i) {
        const double diff = pint[i] - pnext[i];
        bx += pgx[i] * diff;
        by += pgy[i] * diff;
      }
      bx /= n;
      by /= n;
      const double ux = i11 * bx + i12 * by;
      const double uy = i12 * bx + i22 * by;
      dx += ux;
      dy += uy;
      // track the point in level-0 coordinates
      const double full = static_cast<double>(1 << level);
      const double tx = point.x() + dx * full;
      const double ty = point.y() + dy * full;
      if (tx < 0.0 || tx > pp.prev[0].width - 1.0 || ty < 0.0 || ty > pp.prev[0].height - 1.0) {
        out_of_bounds = true;
        break;
      }
      if (std::hypot(ux, uy) < params.eps) break;
    }
    if (out_of_bounds) break;
  }

  TrackResult res;
  res.dx = dx;
  res.dy = dy;
  res.ok = !out_of_bounds && (any_textured || keep_low_texture);
  return res;
}

FlowField track_points(const Image& prev, const Image& next,
                       const std::vector<Eigen::Vector2d>& points, const LkParams& params,
                       bool keep_low_texture) {
  if (prev.width != next.width || prev.height != next.height)
    throw std::invalid_argument("lucas_kanade: frames must have identical dimensions");
  params.validate();
  for (const auto& p : points)
    if (p.x() < 0.0 || p.x() > prev.width - 1.0 || p.y() < 0.0 || p.y() > prev.height - 1.0)
      throw std::invalid_argument("lucas_kanade: point outside image bounds");

  const PyramidPair pp = prepare_pyramids(prev, next, params);
  const int n = static_cast<int>(points.size());
  std::vector<TrackResult> results(n);
  parallel_for(0, n, [&](int i) {
    thread_local std::vector<double> scratch;
    results[i] = track_point(pp, points[i], params, keep_low_texture, scratch);
  });

  FlowField field;
  field.reserve(points.size());
  for (int i = 0; i < n; ++i)
    field.push(points[i].x(), points[i].y(), results[i].dx, results[i].dy, results[i].ok);
  return field;
}

}  // namespace

FlowField lucas_kanade(const Image& prev, const Image& next,
                       const std::vector<Eigen::Vector2d>& points, const LkParams& params) {
  return track_points(prev, next, points, params, false);
}

FlowField dense_flow(const Image& prev, const Image& next, const LkParams& params) {
  std::vector<Eigen::Vector2d> points;
  points.reserve(static_cast<size_t>(prev.width) * prev.height);
  for (int y = 0; y < prev.height; ++y)
    for (int x = 0; x < prev.width; ++x) points.emplace_back(x, y);
  return track_points(prev, next, points, params, true);
}

std::vector<Eigen::Vector2d> grid_points(int width, int height, int stride, int margin) {
  if (stride < 1) throw std::invalid_argument("grid_points: stride must be >= 1");
  std::vector<Eigen::Vector2d> pts;
  for (int y = margin; y < height - margin; y += stride)
    for (int x = margin; x < width - margin; x += stride) pts.emplace_back(x, y);
  return pts;
}

}  // namespace lcmflow
