#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>

#include "lcmflow/core.hpp"

namespace lcmflow {

// Grayscale image: real-valued intensities in [0, 255].
using Image = Grid<double>;

void validate_image(const Image& img);

// 8-bit binary PGM (P5) I/O.
Image load_pgm(const std::string& path);
void save_pgm(const Image& img, const std::string& path);

// Spatial partial derivatives from 3x3 Scharr kernels, scaled so a unit-slope
// intensity ramp yields gradient 1.0. Borders replicate edge pixels.
// Requires width, height >= 3.
std::pair<Grid<double>, Grid<double>> gradients(const Image& img);

// Eigendecomposition of a symmetric 2x2 matrix [s11 s12; s12 s22]:
// eigenvalues t_major >= t_minor >= 0 and the angle of the major eigenvector
// wrapped to (-pi/2, pi/2]. Small negative eigenvalues within tolerance are
// clamped to zero; indefinite inputs beyond tolerance throw.
struct Eig2x2 {
  double t_major = 0.0;
  double t_minor = 0.0;
  double angle = 0.0;
};
Eig2x2 eigendecompose_2x2(double s11, double s12, double s22);

// Per-pixel structure tensor eigensystem: directional texture magnitudes
// (intensity^2/pixel^2) and the eigenbasis rotation angle in the image basis.
struct StructureField {
  Grid<double> t_major;
  Grid<double> t_minor;
  Grid<double> angle;

  int width() const { return t_major.width; }
  int height() const { return t_major.height; }
};

// Gaussian-weighted structure tensor over an odd window (weights sum to 1),
// eigendecomposed at every pixel.
StructureField structure_field(const Image& img, int window = 21, double sigma = 3.5);

// Raw little-endian f32 triples (t_major, t_minor, angle), row-major.
void save_structure_field(const StructureField& field, const std::string& path);
StructureField load_structure_field(const std::string& path, int width, int height);

// Rotate an image-basis vector into / out of a pixel's eigenbasis.
Eigen::Vector2d to_eigenbasis(const Eigen::Vector2d& y_image, double angle);
Eigen::Vector2d from_eigenbasis(const Eigen::Vector2d& y_eigen, double angle);

}  // namespace lcmflow
