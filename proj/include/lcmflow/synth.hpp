#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lcmflow/flow.hpp"
#include "lcmflow/geometry.hpp"
#include "lcmflow/imaging.hpp"

namespace lcmflow {

// Procedural scene: a single textured plane. The world frame has +z pointing
// from the cameras toward the plane at z = plane_distance; trajectories live
// in the z = 0 plane, so the scene plane is parallel to the motion plane.
struct SceneSpec {
  double plane_distance = 5.0;  // meters
  double freq_low = 0.4;        // texture band, cycles/meter
  double freq_high = 2.0;
  double contrast = 60.0;       // intensity units, (0, 127]
  // lattice stretch upper bound per octave (>= 1); values above 1 produce
  // elongated, edge-like cells whose along-edge motion is ambiguous
  double anisotropy = 1.0;
  // per-pixel sensor noise, intensity units; drawn fresh per rendered frame
  double noise_sigma = 0.0;
  uint64_t seed = 1;

  void validate() const;
};

struct TrajectorySpec {
  enum class Kind { straight, fig8 };
  Kind kind = Kind::straight;
  double span = 30.0;       // meters (line length / figure-eight extent)
  int frames = 200;
  double frame_rate = 60.0;  // Hz

  void validate() const;
};

// Band-passed value noise with a slowly varying amplitude envelope, evaluable
// at arbitrary real coordinates so rendering at shifted poses is exact.
// Values are 128 +- contrast; the envelope sweeps local texture strength
// across several decades within a single frame.
class PlanarTexture {
 public:
  explicit PlanarTexture(const SceneSpec& spec);
  double operator()(double x, double y) const;

 private:
  std::vector<double> octave_freq_;
  std::vector<uint64_t> octave_salt_;
  std::vector<double> octave_cos_, octave_sin_;  // stripe orientation
  std::vector<double> octave_stretch_;
  double envelope_freq_ = 0.0;
  uint64_t envelope_salt_ = 0;
  double contrast_ = 0.0;
};

PlanarTexture make_texture(const SceneSpec& spec);

// Ray-casts every pixel to the scene plane: intensities from the texture
// (clamped to [0,255], not yet quantized) and the exact inverse z-depth of
// each intersection. Sensor noise, when enabled, is seeded by noise_salt so
// each frame of a sequence gets an independent, reproducible realization.
// Throws when any pixel ray misses the plane.
std::pair<Image, DepthMap> render_frame(const SceneSpec& scene, const CameraModel& camera,
                                        const Pose& pose, uint64_t noise_salt = 0);

// straight: constant-velocity line along +x with fixed nadir orientation.
// fig8: closed Gerono lemniscate in the motion plane, heading tangent to the
// path (yaw about the optical axis).
std::vector<Pose> make_trajectory(const TrajectorySpec& spec);

// Flow of a pixel via the world-space plane intersection, independent of the
// inverse-depth lift used by the geometry module. Empty when either
// projection fails.
std::optional<Eigen::Vector2d> plane_flow_analytic(double plane_z, const CameraModel& camera,
                                                   const Pose& from, const Pose& to,
                                                   const Eigen::Vector2d& pixel);

// Round intensities to the 8-bit grid the PGM files store.
Image quantize_8bit(const Image& img);

struct DatasetSpec {
  SceneSpec scene;
  TrajectorySpec trajectory;
  CameraModel camera;
  LkParams lk;
  int structure_window = 0;      // 0: use lk.window
  double structure_sigma = 0.0;  // 0: window / 6
  int sparse_stride = 8;
  bool with_dense = true;
  bool with_sparse = true;

  int effective_structure_window() const { return structure_window > 0 ? structure_window : lk.window; }
  double effective_structure_sigma() const {
    return structure_sigma > 0.0 ? structure_sigma : effective_structure_window() / 6.0;
  }
};

// Renders the full dataset: frames (PGM), depth maps (f32), structure fields
// (f32 triples), ground-truth flow and measured dense/sparse flow (FLF1) per
// frame pair, the ground-truth trajectory CSV and a manifest. Byte-identical
// for identical specs.
void build_dataset(const DatasetSpec& spec, const std::string& out_dir);

// Dataset layout helpers (pair products are indexed by the earlier frame).
std::string frame_path(const std::string& dir, int k);
std::string depth_path(const std::string& dir, int k);
std::string structure_path(const std::string& dir, int k);
std::string gtflow_path(const std::string& dir, int k);
std::string dense_flow_path(const std::string& dir, int k);
std::string sparse_flow_path(const std::string& dir, int k);
std::string truth_path(const std::string& dir);
std::string manifest_path(const std::string& dir);

void save_depth_map(const DepthMap& depth, const std::string& path);
DepthMap load_depth_map(const std::string& path, int width, int height);

DatasetSpec load_manifest(const std::string& dir);

}  // namespace lcmflow
