#pragma once

#include <Eigen/Dense>
#include <vector>

#include "lcmflow/flow_field.hpp"
#include "lcmflow/imaging.hpp"

namespace lcmflow {

struct LkParams {
  int window = 21;      // odd, >= 3
  int max_level = 3;    // pyramid levels 0..max_level
  int max_iters = 30;   // per-level solver iterations
  double eps = 0.01;    // stop when the update norm drops below this [px]

  void validate() const;
};

// Level 0 is the input; each further level is a 5-tap Gaussian blur
// (sigma 1.0) followed by decimation by 2. The coarsest level must stay
// at least 8x8.
std::vector<Image> build_pyramid(const Image& img, int levels);

// Iterative coarse-to-fine Lucas-Kanade at the given points. A point is
// invalid when its window tensor is near-singular (smaller eigenvalue below
// 1e-4 per window pixel) or when it tracks outside the image.
FlowField lucas_kanade(const Image& prev, const Image& next,
                       const std::vector<Eigen::Vector2d>& points, const LkParams& params);

// Lucas-Kanade evaluated at every pixel center. Low-texture pixels are still
// emitted as valid (the likelihood model judges them); only samples that
// track out of bounds are flagged invalid.
FlowField dense_flow(const Image& prev, const Image& next, const LkParams& params);

// Regular grid of sample points with a margin from the border.
std::vector<Eigen::Vector2d> grid_points(int width, int height, int stride, int margin);

}  // namespace lcmflow
