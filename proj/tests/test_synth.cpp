#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <random>

#include "lcmflow/egomotion.hpp"
#include "lcmflow/synth.hpp"
#include "oracles.hpp"

using namespace lcmflow;
namespace fs = std::filesystem;

namespace {

SceneSpec test_scene(uint64_t seed = 5) {
  SceneSpec s;
  s.plane_distance = 5.0;
  s.freq_low = 0.5;
  s.freq_high = 2.0;
  s.contrast = 60.0;
  s.seed = seed;
  return s;
}

CameraModel small_camera() { return CameraModel{64, 48, 100.0 * M_PI / 180.0}; }

DatasetSpec small_dataset_spec() {
  DatasetSpec spec;
  spec.scene = test_scene(9);
  spec.scene.freq_low = 0.8;
  spec.scene.freq_high = 3.0;
  spec.trajectory.kind = TrajectorySpec::Kind::straight;
  spec.trajectory.span = 0.4;
  spec.trajectory.frames = 4;
  spec.camera = small_camera();
  spec.lk.window = 9;
  spec.lk.max_level = 1;
  spec.sparse_stride = 8;
  return spec;
}

}  // namespace

TEST_CASE("texture is deterministic in the seed") {
  const PlanarTexture a = make_texture(test_scene(42));
  const PlanarTexture b = make_texture(test_scene(42));
  const PlanarTexture c = make_texture(test_scene(43));
  std::mt19937_64 rng(1);
  int differs = 0;
  for (int i = 0; i < 1000; ++i) {
    const double x = 40.0 * (uniform01(rng) - 0.5);
    const double y = 40.0 * (uniform01(rng) - 0.5);
    CHECK(a(x, y) == b(x, y));
    if (a(x, y) != c(x, y)) ++differs;
  }
  CHECK(differs > 990);
}

TEST_CASE("texture deviation from 128 scales linearly with contrast") {
  SceneSpec half = test_scene(7);
  half.contrast = 30.0;
  SceneSpec full = test_scene(7);
  full.contrast = 60.0;
  const PlanarTexture a = make_texture(half);
  const PlanarTexture b = make_texture(full);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double x = 30.0 * (uniform01(rng) - 0.5);
    const double y = 30.0 * (uniform01(rng) - 0.5);
    CHECK(b(x, y) - 128.0 == doctest::Approx(2.0 * (a(x, y) - 128.0)).epsilon(1e-12));
    CHECK(std::abs(b(x, y) - 128.0) <= full.contrast);
  }
}

TEST_CASE("scene spec invariants are enforced") {
  SceneSpec s = test_scene();
  s.contrast = 0.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = test_scene();
  s.freq_low = 3.0;  // above freq_high
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = test_scene();
  s.plane_distance = -1.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("render_frame: nadir view of the plane gives a constant depth map") {
  const CameraModel cam = small_camera();
  Pose nadir;  // identity: optical axis straight at the plane
  const auto [img, depth] = render_frame(test_scene(), cam, nadir);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      CHECK(std::abs(depth.inverse_depth.at(x, y) - 0.2) < 1e-12);
  // intensities in range and non-degenerate
  double lo = 255.0, hi = 0.0;
  for (double v : img.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= 0.0);
  CHECK(hi <= 255.0);
  CHECK(hi - lo > 20.0);
}

TEST_CASE("render_frame: tilted view depth matches the plane-ray closed form") {
  const CameraModel cam = small_camera();
  Pose tilted;
  tilted.position = {0.3, -0.2, 0.1};
  tilted.orientation = {0.2, 10.0 * M_PI / 180.0, -0.05};
  const SceneSpec scene = test_scene();
  const auto [img, depth] = render_frame(scene, cam, tilted);
  const Eigen::Matrix3d r = tilted.rotation();
  for (const auto& px : {Eigen::Vector2d{0, 0}, Eigen::Vector2d{63, 0}, Eigen::Vector2d{31, 24},
                         Eigen::Vector2d{0, 47}, Eigen::Vector2d{63, 47}}) {
    const Eigen::Vector3d ray = pixel_to_ray(cam, px);
    const Eigen::Vector3d w = r * ray;
    const double s = (scene.plane_distance - tilted.position.z()) / w.z();
    const double expect = 1.0 / (s * ray.z());
    CHECK(std::abs(depth.inverse_depth.at(int(px.x()), int(px.y())) - expect) < 1e-9);
  }
  // depth varies across the image for an oblique plane
  CHECK(std::abs(depth.inverse_depth.at(0, 0) - depth.inverse_depth.at(63, 47)) > 1e-4);
}

TEST_CASE("render_frame throws when the plane is behind the camera") {
  const CameraModel cam = small_camera();
  Pose away;
  away.orientation = {0.0, M_PI, 0.0};  // optical axis pointing away from the plane
  CHECK_THROWS_AS(render_frame(test_scene(), cam, away), std::invalid_argument);
}

TEST_CASE("lateral camera translation shifts the rendered image by f*delta/d") {
  const CameraModel cam = small_camera();
  const SceneSpec scene = test_scene(21);
  Pose a;  // nadir at origin
  Pose b;
  const double delta = 0.25;
  b.position = {delta, 0.0, 0.0};
  const auto [img_a, depth_a] = render_frame(scene, cam, a);
  const auto [img_b, depth_b] = render_frame(scene, cam, b);

  LkParams lk;
  lk.window = 11;
  lk.max_level = 1;
  const auto points = grid_points(cam.width, cam.height, 6, 10);
  const FlowField flow = lucas_kanade(img_a, img_b, points, lk);
  const double expect = -cam.focal() * delta / scene.plane_distance;
  size_t checked = 0;
  for (size_t i = 0; i < flow.size(); ++i) {
    if (!flow.valid[i]) continue;
    CHECK(flow.dx[i] == doctest::Approx(expect).epsilon(0.05));
    CHECK(std::abs(flow.dy[i]) < 0.1);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("straight trajectories space frames uniformly with fixed orientation") {
  TrajectorySpec spec;
  spec.kind = TrajectorySpec::Kind::straight;
  spec.span = 10.0;
  spec.frames = 11;
  const std::vector<Pose> poses = make_trajectory(spec);
  REQUIRE(poses.size() == 11);
  for (size_t k = 1; k < poses.size(); ++k) {
    CHECK((poses[k].position - poses[k - 1].position).norm() == doctest::Approx(1.0));
    CHECK(poses[k].orientation.norm() == 0.0);
  }
}

TEST_CASE("fig8 trajectories close and keep heading tangent to the path") {
  TrajectorySpec spec;
  spec.kind = TrajectorySpec::Kind::fig8;
  spec.span = 16.0;
  spec.frames = 201;
  const std::vector<Pose> poses = make_trajectory(spec);
  REQUIRE(poses.size() == 201);
  CHECK((poses.front().position - poses.back().position).norm() < 1e-9);
  // heading matches the finite-difference direction of travel
  for (size_t k = 1; k + 1 < poses.size(); k += 20) {
    const Eigen::Vector3d v = poses[k + 1].position - poses[k - 1].position;
    const double heading = std::atan2(v.y(), v.x());
    double diff = poses[k].orientation.x() - heading;
    while (diff > M_PI) diff -= 2 * M_PI;
    while (diff < -M_PI) diff += 2 * M_PI;
    CHECK(std::abs(diff) < 0.05);
  }
}

TEST_CASE("build_dataset writes every product and reloads consistently") {
  const DatasetSpec spec = small_dataset_spec();
  const fs::path dir = fs::temp_directory_path() / "lcmflow_synth_ds";
  fs::remove_all(dir);
  build_dataset(spec, dir.string());

  for (int k = 0; k < spec.trajectory.frames; ++k) {
    CHECK(fs::exists(frame_path(dir.string(), k)));
    CHECK(fs::exists(depth_path(dir.string(), k)));
  }
  for (int k = 0; k + 1 < spec.trajectory.frames; ++k) {
    CHECK(fs::exists(structure_path(dir.string(), k)));
    CHECK(fs::exists(gtflow_path(dir.string(), k)));
    CHECK(fs::exists(dense_flow_path(dir.string(), k)));
    CHECK(fs::exists(sparse_flow_path(dir.string(), k)));
  }
  CHECK(fs::exists(truth_path(dir.string())));

  const DatasetSpec loaded = load_manifest(dir.string());
  CHECK(loaded.camera.width == spec.camera.width);
  CHECK(loaded.scene.seed == spec.scene.seed);
  CHECK(loaded.trajectory.frames == spec.trajectory.frames);
  CHECK(loaded.lk.window == spec.lk.window);

  const std::vector<Pose> truth = load_trajectory_csv(truth_path(dir.string()));
  CHECK(truth.size() == 4);

  // measured dense flow approximates ground truth on this clean scene
  const FlowField gt = load_flow_field(gtflow_path(dir.string(), 0));
  const FlowField dense = load_flow_field(dense_flow_path(dir.string(), 0));
  REQUIRE(gt.size() == dense.size());
  double total_err = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid[i] || !dense.valid[i]) continue;
    if (gt.x[i] < 8 || gt.x[i] > 55 || gt.y[i] < 8 || gt.y[i] > 39) continue;
    total_err += std::hypot(dense.dx[i] - gt.dx[i], dense.dy[i] - gt.dy[i]);
    ++n;
  }
  REQUIRE(n > 500);
  CHECK(total_err / n < 0.25);
  fs::remove_all(dir);
}

TEST_CASE("rebuilding a dataset with the same seed is byte-identical") {
  const DatasetSpec spec = small_dataset_spec();
  const fs::path dir_a = fs::temp_directory_path() / "lcmflow_synth_a";
  const fs::path dir_b = fs::temp_directory_path() / "lcmflow_synth_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  build_dataset(spec, dir_a.string());
  build_dataset(spec, dir_b.string());
  size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir_a)) {
    const std::string name = entry.path().filename().string();
    CHECK(fnv1a_file((dir_a / name).string()) == fnv1a_file((dir_b / name).string()));
    ++files;
  }
  CHECK(files > 10);
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("near-static trajectory yields vanishing ground-truth flow") {
  DatasetSpec spec = small_dataset_spec();
  spec.trajectory.span = 1e-12;
  spec.trajectory.frames = 3;
  spec.with_dense = false;
  spec.with_sparse = false;
  const fs::path dir = fs::temp_directory_path() / "lcmflow_synth_static";
  fs::remove_all(dir);
  build_dataset(spec, dir.string());
  for (int k = 0; k < 2; ++k) {
    const FlowField gt = load_flow_field(gtflow_path(dir.string(), k));
    for (size_t i = 0; i < gt.size(); ++i) {
      REQUIRE(gt.valid[i] == 1);
      CHECK(std::abs(gt.dx[i]) < 1e-9);
      CHECK(std::abs(gt.dy[i]) < 1e-9);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("stored ground-truth flow agrees with the analytic plane route") {
  const DatasetSpec spec = small_dataset_spec();
  const std::vector<Pose> poses = make_trajectory(spec.trajectory);
  const auto [img, depth] = render_frame(spec.scene, spec.camera, poses[0]);
  std::vector<Eigen::Vector2d> pixels;
  std::mt19937_64 rng(33);
  for (int i = 0; i < 300; ++i)
    pixels.emplace_back(uniform01(rng) * (spec.camera.width - 1),
                        uniform01(rng) * (spec.camera.height - 1));
  const FlowField lifted = ground_truth_flow(poses[1], poses[0], pixels, depth, spec.camera);
  for (size_t i = 0; i < pixels.size(); ++i) {
    const auto analytic = plane_flow_analytic(spec.scene.plane_distance, spec.camera, poses[0],
                                              poses[1], pixels[i]);
    REQUIRE(analytic.has_value());
    REQUIRE(lifted.valid[i] == 1);
    CHECK(std::abs(lifted.dx[i] - analytic->x()) < 1e-9);
    CHECK(std::abs(lifted.dy[i] - analytic->y()) < 1e-9);
  }
}

TEST_CASE("eigenbasis error magnitudes fall as texture rises on a rendered pair") {
  // one scene, one step; bins over the within-frame texture spread
  DatasetSpec spec = small_dataset_spec();
  spec.camera = CameraModel{128, 96, 100.0 * M_PI / 180.0};
  spec.scene.contrast = 70.0;
  spec.trajectory.span = 0.2;
  spec.trajectory.frames = 2;
  const std::vector<Pose> poses = make_trajectory(spec.trajectory);
  const auto [img0r, depth0] = render_frame(spec.scene, spec.camera, poses[0]);
  const auto [img1r, depth1] = render_frame(spec.scene, spec.camera, poses[1]);
  const Image img0 = quantize_8bit(img0r);
  const Image img1 = quantize_8bit(img1r);

  const StructureField structure = structure_field(img0, spec.lk.window, spec.lk.window / 6.0);
  const FlowField dense = dense_flow(img0, img1, spec.lk);
  std::vector<Eigen::Vector2d> pixels;
  for (size_t i = 0; i < dense.size(); ++i) pixels.emplace_back(dense.x[i], dense.y[i]);
  const FlowField gt = ground_truth_flow(poses[1], poses[0], pixels, depth0, spec.camera);

  std::vector<std::vector<double>> bins(6);
  for (size_t i = 0; i < dense.size(); ++i) {
    if (!dense.valid[i] || !gt.valid[i]) continue;
    const int px = static_cast<int>(dense.x[i]);
    const int py = static_cast<int>(dense.y[i]);
    if (px < 8 || px > spec.camera.width - 9 || py < 8 || py > spec.camera.height - 9) continue;
    const Eigen::Vector2d err(dense.dx[i] - gt.dx[i], dense.dy[i] - gt.dy[i]);
    const Eigen::Vector2d z = to_eigenbasis(err, structure.angle.at(px, py));
    auto put = [&bins](double t, double zc) {
      const double lt = std::log10(std::max(t, 1e-3));
      const int bin = std::clamp(static_cast<int>((lt + 1.0) / 0.8), 0, 5);
      bins[bin].push_back(std::abs(zc));
    };
    put(structure.t_major.at(px, py), z.x());
    put(structure.t_minor.at(px, py), z.y());
  }

  std::vector<double> medians;
  for (auto& bin : bins) {
    if (bin.size() < 200) continue;
    std::sort(bin.begin(), bin.end());
    medians.push_back(bin[bin.size() / 2]);
  }
  REQUIRE(medians.size() >= 3);
  int drops = 0;
  for (size_t i = 1; i < medians.size(); ++i)
    if (medians[i] <= medians[i - 1]) ++drops;
  // texture up, error down on most adjacent bin pairs
  CHECK(drops >= static_cast<int>(medians.size()) - 2);
  CHECK(medians.back() < medians.front());
}
