#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "lcmflow/geometry.hpp"
#include "lcmflow/imaging.hpp"
#include "lcmflow/likelihood.hpp"

namespace lcmflow {

// One usable flow measurement with everything pose evaluation needs.
struct EgoSample {
  Eigen::Vector2d pixel;     // sample position in frame k-1
  Eigen::Vector2d measured;  // observed flow vector, image basis
  Eigen::Vector3d ray;       // unit viewing ray of pixel
  double inv_range = 0.0;    // inverse range along ray (from the depth map)
  double cos_a = 1.0, sin_a = 0.0;  // eigenbasis angle at pixel
  double t_major = 0.0, t_minor = 0.0;
};

// Everything aligned to frame k-1: known previous pose, measured flow,
// structure tensors and ground-truth depth of the same frame.
struct EgoProblem {
  Pose prev_pose;
  CameraModel camera;
  std::vector<EgoSample> samples;

  // Flattens the aligned fields into sample records, skipping invalid flow
  // samples and pixels without depth. max_samples > 0 thins by a fixed
  // stride, deterministically.
  static EgoProblem assemble(const Pose& prev_pose, const FlowField& flow,
                             const StructureField& structure, const DepthMap& depth,
                             const CameraModel& camera, size_t max_samples = 0);
};

// Residual of one sample rotated into its eigenbasis, with textures.
struct EigenbasisError {
  double z_major = 0.0, t_major = 0.0;
  double z_minor = 0.0, t_minor = 0.0;
};

// Per-sample eigenbasis errors for a pose hypothesis. Samples whose
// projection is invalid under x are excluded and counted.
std::vector<EigenbasisError> eigen_errors(const Pose& x, const EgoProblem& problem,
                                          size_t* excluded = nullptr);

// Flow likelihood: texture-scheduled LCM via a parameter table, or the
// fixed-sigma Gaussian used by the RANSAC baseline.
struct LikelihoodModel {
  enum class Kind { lcm, gaussian };
  Kind kind = Kind::gaussian;
  const ParamLut* lut = nullptr;
  double sigma = 0.25;

  static LikelihoodModel lcm_model(const ParamLut& lut) { return {Kind::lcm, &lut, 0.0}; }
  static LikelihoodModel gaussian_model(double sigma) { return {Kind::gaussian, nullptr, sigma}; }
};

// Component mask per sample: bit 0 keeps the major-axis component, bit 1 the
// minor-axis component. Empty mask means all components active.
using ComponentMask = std::vector<uint8_t>;

// Negative log-likelihood summed over active components of all samples.
// Components of samples with invalid projections incur a fixed penalty.
// Throws when no component is active.
double flow_nll(const Pose& x, const EgoProblem& problem, const LikelihoodModel& model,
                const ComponentMask* mask = nullptr);

struct MleOptions {
  int max_evals = 1200;
  double position_step = 0.02;  // initial simplex step, meters
  double angle_step = 0.008;    // initial simplex step, radians
  uint64_t seed = 17;
};

struct MleResult {
  Pose pose;
  double nll = 0.0;
  bool improved = false;  // false: optimizer failed to beat the init
  int evals = 0;
};

// 6-DoF maximum-likelihood pose by Nelder-Mead from init, plus one restart
// from a small random perturbation; returns the best found. Requires at
// least 3 active flow vectors.
MleResult mle_pose(const EgoProblem& problem, const LikelihoodModel& model, const Pose& init,
                   const MleOptions& options = {}, const ComponentMask* mask = nullptr);

struct SacConfig {
  int min_samples = 3;  // flow vectors per hypothesis
  int max_iters = 100;
  double confidence = 0.99;        // stop once this success probability is reached
  double inlier_threshold = 0.5;   // pixels (RANSAC) or confidence level (LCMSAC)
  double texture_cutoff = 0.0;     // LCMSAC dense mode drops t_major below this
  double gaussian_sigma = 0.25;    // the 0.5 px gate is a 2-sigma gate
  uint64_t seed = 0;
  MleOptions hypothesis_opt{600, 0.02, 0.008, 17};
  MleOptions refit_opt{1200, 0.01, 0.004, 29};
};

struct SacResult {
  Pose pose;
  bool ok = false;
  ComponentMask inliers;   // indexed like problem.samples
  size_t consensus = 0;    // inlier vectors (RANSAC) or components (LCMSAC)
  double inlier_ratio = 0.0;
  int iterations = 0;
};

// Classic RANSAC: Gaussian-likelihood hypotheses on minimal 3-vector samples,
// consensus by image-basis residual norm under the pixel threshold, Gaussian
// maximum-likelihood refit on the inlier vectors. Iteration count adapts via
// the standard (1 - w^m) formula, capped at max_iters. Deterministic given
// config.seed (per-iteration RNG streams).
SacResult ransac_egomotion(const EgoProblem& problem, const SacConfig& config,
                           const Pose& init);

// LCMSAC: same hypothesis generation, but consensus counts eigenbasis
// components inside the texture-dependent LCM confidence region
// (level = config.inlier_threshold), and the final refit maximizes the LCM
// likelihood over inlier components only.
SacResult lcmsac_egomotion(const EgoProblem& problem, const ParamLut& lut,
                           const SacConfig& config, const Pose& init);

// Loop-closure style drift: final translational error over trajectory length,
// in percent. Requires equal lengths >= 2 and a nonzero path.
double drift_rate(const std::vector<Pose>& estimated, const std::vector<Pose>& truth);

// Trajectory CSV with header k,x,y,z,yaw,pitch,roll (meters, radians).
void save_trajectory_csv(const std::string& path, const std::vector<Pose>& poses);
std::vector<Pose> load_trajectory_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Sequential odometry over a frame-pair stream.

struct OdometryFrame {
  FlowField flow;
  StructureField structure;
  DepthMap depth;
};

enum class Estimator { ransac, lcmsac };

struct OdometryStats {
  std::vector<Pose> estimated;
  double drift_percent = 0.0;
  double path_length_m = 0.0;
  double final_error_m = 0.0;
  std::vector<double> frame_error_m;
  std::vector<double> inlier_ratio;
  int failures = 0;
};

// Chains per-frame estimates from truth[0], seeding each solve with a
// constant-velocity prediction. frames(k) supplies the bundle for the pair
// (k, k+1); lut may be null for the RANSAC estimator.
OdometryStats run_odometry(const std::vector<Pose>& truth, const CameraModel& camera,
                           const std::function<OdometryFrame(int)>& frames, Estimator estimator,
                           const SacConfig& config, const ParamLut* lut, size_t max_samples);

}  // namespace lcmflow
