#include "lcmflow/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace lcmflow {

void validate_image(const Image& img) {
  if (img.width <= 0 || img.height <= 0)
    throw std::invalid_argument("Image: dimensions must be positive");
  for (double v : img.values)
    if (!std::isfinite(v) || v < 0.0 || v > 255.0)
      throw std::invalid_argument("Image: intensities must be finite and within [0, 255]");
}

Image load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw DataError("load_pgm: " + path + " is not a binary PGM (P5)");
  auto next_token = [&in, &path]() -> long {
    // skip whitespace and '#' comment lines
    while (true) {
      const int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    long v = -1;
    in >> v;
    if (!in) throw DataError("load_pgm: malformed header in " + path);
    return v;
  };
  const long w = next_token(), h = next_token(), maxval = next_token();
  if (w <= 0 || h <= 0 || maxval != 255)
    throw DataError("load_pgm: unsupported PGM header in " + path);
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw DataError("load_pgm: truncated pixel data in " + path);
  Image img(static_cast<int>(w), static_cast<int>(h));
  for (size_t i = 0; i < raw.size(); ++i) img.values[i] = static_cast<double>(raw[i]);
  return img;
}

void save_pgm(const Image& img, const std::string& path) {
  validate_image(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_pgm: cannot open " + path + " for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.size());
  for (size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img.values[i], 0.0, 255.0)));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("save_pgm: write failed for " + path);
}

std::pair<Grid<double>, Grid<double>> gradients(const Image& img) {
  if (img.width < 3 || img.height < 3)
    throw std::invalid_argument("gradients: image must be at least 3x3");
  Grid<double> gx(img.width, img.height), gy(img.width, img.height);
  // Scharr weights 3/10/3; j-moment is 32, so 1/32 scales a unit ramp to 1.0.
  const double k0 = 3.0 / 32.0, k1 = 10.0 / 32.0;
  const int w = img.width, h = img.height;
  auto px = [&img, w, h](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return img.at(x, y);
  };
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      const double right = k0 * px(x + 1, y - 1) + k1 * px(x + 1, y) + k0 * px(x + 1, y + 1);
      const double left = k0 * px(x - 1, y - 1) + k1 * px(x - 1, y) + k0 * px(x - 1, y + 1);
      const double bot = k0 * px(x - 1, y + 1) + k1 * px(x, y + 1) + k0 * px(x + 1, y + 1);
      const double top = k0 * px(x - 1, y - 1) + k1 * px(x, y - 1) + k0 * px(x + 1, y - 1);
      gx.at(x, y) = right - left;
      gy.at(x, y) = bot - top;
    }
  });
  return {std::move(gx), std::move(gy)};
}

Eig2x2 eigendecompose_2x2(double s11, double s12, double s22) {
  const double scale = std::max(1.0, std::abs(s11) + std::abs(s22) + std::abs(s12));
  const double tol = 1e-9 * scale;
  const double mean = 0.5 * (s11 + s22);
  const double half_diff = 0.5 * (s11 - s22);
  const double radius = std::hypot(half_diff, s12);
  double t_major = mean + radius;
  double t_minor = mean - radius;
  if (t_minor < -tol || t_major < -tol)
    throw std::invalid_argument("eigendecompose_2x2: matrix is not positive semi-definite");
  t_major = std::max(t_major, 0.0);
  t_minor = std::max(t_minor, 0.0);

  double angle;
  if (std::abs(s12) < 1e-12 && std::abs(s11 - s22) < 1e-12) {
    angle = 0.0;  // isotropic: fixed convention
  } else {
    angle = 0.5 * std::atan2(2.0 * s12, s11 - s22);
    if (angle <= -M_PI / 2.0) angle += M_PI;
    if (angle > M_PI / 2.0) angle -= M_PI;
  }
  return {t_major, t_minor, angle};
}

namespace {

// Separable weighted box pass with replicated borders; weights sum to 1.
void weighted_pass(const Grid<double>& src, Grid<double>& dst, const std::vector<double>& wts,
                   bool horizontal) {
  const int r = static_cast<int>(wts.size()) / 2;
  const int w = src.width, h = src.height;
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      if (horizontal) {
        for (int k = -r; k <= r; ++k) s += wts[k + r] * src.at(std::clamp(x + k, 0, w - 1), y);
      } else {
        for (int k = -r; k <= r; ++k) s += wts[k + r] * src.at(x, std::clamp(y + k, 0, h - 1));
      }
      dst.at(x, y) = s;
    }
  });
}

}  // namespace

StructureField structure_field(const Image& img, int window, double sigma) {
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("structure_field: window must be odd and >= 3");
  if (!(sigma > 0.0)) throw std::invalid_argument("structure_field: sigma must be positive");

  auto [gx, gy] = gradients(img);
  const int w = img.width, h = img.height;
  Grid<double> xx(w, h), xy(w, h), yy(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = gx.at(x, y), b = gy.at(x, y);
      xx.at(x, y) = a * a;
      xy.at(x, y) = a * b;
      yy.at(x, y) = b * b;
    }

  const int r = window / 2;
  std::vector<double> wts(window);
  double total = 0.0;
  for (int k = -r; k <= r; ++k) {
    wts[k + r] = std::exp(-0.5 * (k / sigma) * (k / sigma));
    total += wts[k + r];
  }
  for (double& v : wts) v /= total;

  Grid<double> tmp(w, h);
  for (Grid<double>* g : {&xx, &xy, &yy}) {
    weighted_pass(*g, tmp, wts, true);
    weighted_pass(tmp, *g, wts, false);
  }

  StructureField field{Grid<double>(w, h), Grid<double>(w, h), Grid<double>(w, h)};
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      const Eig2x2 e = eigendecompose_2x2(xx.at(x, y), xy.at(x, y), yy.at(x, y));
      field.t_major.at(x, y) = e.t_major;
      field.t_minor.at(x, y) = e.t_minor;
      field.angle.at(x, y) = e.angle;
    }
  });
  return field;
}

void save_structure_field(const StructureField& field, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_structure_field: cannot open " + path + " for writing");
  const int w = field.width(), h = field.height();
  std::vector<float> raw(static_cast<size_t>(w) * h * 3);
  size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      raw[i++] = static_cast<float>(field.t_major.at(x, y));
      raw[i++] = static_cast<float>(field.t_minor.at(x, y));
      raw[i++] = static_cast<float>(field.angle.at(x, y));
    }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!out) throw DataError("save_structure_field: write failed for " + path);
}

StructureField load_structure_field(const std::string& path, int width, int height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_structure_field: cannot open " + path);
  std::vector<float> raw(static_cast<size_t>(width) * height * 3);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(raw.size() * sizeof(float)))
    throw DataError("load_structure_field: size mismatch in " + path);
  StructureField field{Grid<double>(width, height), Grid<double>(width, height),
                       Grid<double>(width, height)};
  size_t i = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      field.t_major.at(x, y) = raw[i++];
      field.t_minor.at(x, y) = raw[i++];
      field.angle.at(x, y) = raw[i++];
    }
  return field;
}

Eigen::Vector2d to_eigenbasis(const Eigen::Vector2d& y_image, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  // R(angle)^T * y
  return {c * y_image.x() + s * y_image.y(), -s * y_image.x() + c * y_image.y()};
}

Eigen::Vector2d from_eigenbasis(const Eigen::Vector2d& y_eigen, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * y_eigen.x() - s * y_eigen.y(), s * y_eigen.x() + c * y_eigen.y()};
}

}  // namespace lcmflow
