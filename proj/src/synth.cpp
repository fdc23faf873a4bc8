#include "lcmflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "lcmflow/egomotion.hpp"

namespace lcmflow {

void SceneSpec::validate() const {
  if (!(plane_distance > 0.0)) throw std::invalid_argument("SceneSpec: plane_distance must be > 0");
  if (!(freq_low > 0.0 && freq_low < freq_high))
    throw std::invalid_argument("SceneSpec: need 0 < freq_low < freq_high");
  if (!(contrast > 0.0 && contrast <= 127.0))
    throw std::invalid_argument("SceneSpec: contrast must lie in (0, 127]");
  if (!(anisotropy >= 1.0)) throw std::invalid_argument("SceneSpec: anisotropy must be >= 1");
}

void TrajectorySpec::validate() const {
  if (frames < 2) throw std::invalid_argument("TrajectorySpec: need at least 2 frames");
  if (!(span > 0.0)) throw std::invalid_argument("TrajectorySpec: span must be > 0");
  if (!(frame_rate > 0.0)) throw std::invalid_argument("TrajectorySpec: frame_rate must be > 0");
}

namespace {

double lattice_value(uint64_t salt, int64_t ix, int64_t iy) {
  const uint64_t key = salt ^ (static_cast<uint64_t>(ix) * 0x9e3779b97f4a7c15ull) ^
                       (static_cast<uint64_t>(iy) * 0xc2b2ae3d27d4eb4full);
  return 2.0 * hash_unit(key) - 1.0;
}

// Value noise: bilinear blend of a hashed lattice.
double value_noise(uint64_t salt, double freq, double x, double y) {
  const double gx = x * freq;
  const double gy = y * freq;
  const double fx = std::floor(gx);
  const double fy = std::floor(gy);
  const int64_t ix = static_cast<int64_t>(fx);
  const int64_t iy = static_cast<int64_t>(fy);
  const double ux = gx - fx;
  const double uy = gy - fy;
  const double v00 = lattice_value(salt, ix, iy);
  const double v10 = lattice_value(salt, ix + 1, iy);
  const double v01 = lattice_value(salt, ix, iy + 1);
  const double v11 = lattice_value(salt, ix + 1, iy + 1);
  const double top = v00 + ux * (v10 - v00);
  const double bot = v01 + ux * (v11 - v01);
  return top + uy * (bot - top);
}

}  // namespace

PlanarTexture::PlanarTexture(const SceneSpec& spec) {
  spec.validate();
  contrast_ = spec.contrast;
  double f = spec.freq_low;
  int octave = 0;
  while (true) {
    octave_freq_.push_back(f);
    const uint64_t salt = splitmix64(spec.seed + 0x100 + static_cast<uint64_t>(octave));
    octave_salt_.push_back(salt);
    const double theta = M_PI * hash_unit(salt ^ 0x5157);
    octave_cos_.push_back(std::cos(theta));
    octave_sin_.push_back(std::sin(theta));
    octave_stretch_.push_back(1.0 + (spec.anisotropy - 1.0) * hash_unit(salt ^ 0xa31d));
    ++octave;
    if (f >= spec.freq_high) break;
    f = std::min(f * 2.0, spec.freq_high);
  }
  envelope_freq_ = spec.freq_low / 6.0;
  envelope_salt_ = splitmix64(spec.seed + 0x9000);
}

double PlanarTexture::operator()(double x, double y) const {
  // octave weights proportional to frequency (flat gradient spectrum), so a
  // wide band still produces strong structure tensors
  double n = 0.0;
  double total = 0.0;
  for (size_t i = 0; i < octave_freq_.size(); ++i) {
    // stretched lattice: full band across the stripes, reduced along them
    const double u = octave_cos_[i] * x + octave_sin_[i] * y;
    const double v = (-octave_sin_[i] * x + octave_cos_[i] * y) / octave_stretch_[i];
    n += octave_freq_[i] * value_noise(octave_salt_[i], octave_freq_[i], u, v);
    total += octave_freq_[i];
  }
  n /= total;
  // Slow amplitude envelope sweeps the local texture level across its full
  // range and bottoms out at exactly zero over part of the plane, giving the
  // dense flow field genuinely untextured regions.
  const double raw = 0.5 + 0.5 * value_noise(envelope_salt_, envelope_freq_, x, y);
  const double e = std::max(0.0, 1.12 * raw - 0.12);
  return 128.0 + contrast_ * e * n;
}

PlanarTexture make_texture(const SceneSpec& spec) { return PlanarTexture(spec); }

std::pair<Image, DepthMap> render_frame(const SceneSpec& scene, const CameraModel& camera,
                                        const Pose& pose) {
  scene.validate();
  camera.validate();
  const PlanarTexture texture(scene);
  const Eigen::Matrix3d R = pose.rotation();
  const Eigen::Vector2d c = camera.principal_point();
  const double f = camera.focal();

  Image img(camera.width, camera.height);
  DepthMap depth(camera.width, camera.height);
  std::atomic<bool> behind{false};
  parallel_for(0, camera.height, [&](int y) {
    for (int x = 0; x < camera.width; ++x) {
      const Eigen::Vector3d ray =
          Eigen::Vector3d((x - c.x()) / f, (y - c.y()) / f, 1.0).normalized();
      const Eigen::Vector3d w = R * ray;
      const double s = (scene.plane_distance - pose.position.z()) / w.z();
      if (!(w.z() != 0.0) || !(s > 0.0)) {
        behind.store(true);
        return;
      }
      const Eigen::Vector3d hit = pose.position + s * w;
      img.at(x, y) = std::clamp(texture(hit.x(), hit.y()), 0.0, 255.0);
      depth.inverse_depth.at(x, y) = 1.0 / (s * ray.z());
    }
  });
  if (behind.load())
    throw std::invalid_argument("render_frame: scene plane is behind the camera for some pixels");
  return {std::move(img), std::move(depth)};
}

std::vector<Pose> make_trajectory(const TrajectorySpec& spec) {
  spec.validate();
  std::vector<Pose> poses;
  poses.reserve(spec.frames);
  const int last = spec.frames - 1;
  if (spec.kind == TrajectorySpec::Kind::straight) {
    for (int k = 0; k < spec.frames; ++k) {
      Pose p;
      p.position = {spec.span * k / static_cast<double>(last), 0.0, 0.0};
      poses.push_back(p);
    }
  } else {
    const double a = spec.span / 2.0;
    for (int k = 0; k < spec.frames; ++k) {
      const double t = 2.0 * M_PI * k / static_cast<double>(last);
      Pose p;
      p.position = {a * std::sin(t), 0.5 * a * std::sin(2.0 * t), 0.0};
      p.orientation = {std::atan2(std::cos(2.0 * t), std::cos(t)), 0.0, 0.0};
      poses.push_back(p);
    }
  }
  return poses;
}

std::optional<Eigen::Vector2d> plane_flow_analytic(double plane_z, const CameraModel& camera,
                                                   const Pose& from, const Pose& to,
                                                   const Eigen::Vector2d& pixel) {
  const Eigen::Vector3d ray = pixel_to_ray(camera, pixel);
  const Eigen::Vector3d w = from.rotation() * ray;
  if (!(w.z() != 0.0)) return std::nullopt;
  const double s = (plane_z - from.position.z()) / w.z();
  if (!(s > 0.0)) return std::nullopt;
  const Eigen::Vector3d world_point = from.position + s * w;
  const Eigen::Vector3d in_to = to.rotation().transpose() * (world_point - to.position);
  if (!(in_to.z() > 0.0)) return std::nullopt;
  return ray_to_pixel(camera, in_to) - pixel;
}

Image quantize_8bit(const Image& img) {
  Image out(img.width, img.height);
  for (size_t i = 0; i < img.size(); ++i)
    out.values[i] = static_cast<double>(std::lround(std::clamp(img.values[i], 0.0, 255.0)));
  return out;
}

namespace {

std::string indexed(const std::string& dir, const char* stem, int k, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%05d.%s", stem, k, ext);
  return dir + "/" + buf;
}

}  // namespace

std::string frame_path(const std::string& dir, int k) { return indexed(dir, "frame", k, "pgm"); }
std::string depth_path(const std::string& dir, int k) { return indexed(dir, "depth", k, "f32"); }
std::string structure_path(const std::string& dir, int k) {
  return indexed(dir, "structure", k, "f32");
}
std::string gtflow_path(const std::string& dir, int k) { return indexed(dir, "gtflow", k, "flf"); }
std::string dense_flow_path(const std::string& dir, int k) {
  return indexed(dir, "flow_dense", k, "flf");
}
std::string sparse_flow_path(const std::string& dir, int k) {
  return indexed(dir, "flow_sparse", k, "flf");
}
std::string truth_path(const std::string& dir) { return dir + "/truth.csv"; }
std::string manifest_path(const std::string& dir) { return dir + "/manifest.json"; }

void save_depth_map(const DepthMap& depth, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_depth_map: cannot open " + path + " for writing");
  std::vector<float> raw(depth.inverse_depth.size());
  for (size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<float>(depth.inverse_depth.values[i]);
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!out) throw DataError("save_depth_map: write failed for " + path);
}

DepthMap load_depth_map(const std::string& path, int width, int height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_depth_map: cannot open " + path);
  std::vector<float> raw(static_cast<size_t>(width) * height);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(raw.size() * sizeof(float)))
    throw DataError("load_depth_map: size mismatch in " + path);
  DepthMap depth(width, height);
  for (size_t i = 0; i < raw.size(); ++i)
    depth.inverse_depth.values[i] = static_cast<double>(raw[i]);
  return depth;
}

namespace {

nlohmann::json manifest_json(const DatasetSpec& spec) {
  nlohmann::json doc;
  doc["format"] = "lcmflow-dataset-v1";
  doc["camera"] = {{"width", spec.camera.width},
                   {"height", spec.camera.height},
                   {"horizontal_fov", spec.camera.horizontal_fov}};
  doc["scene"] = {{"plane_distance", spec.scene.plane_distance},
                  {"freq_low", spec.scene.freq_low},
                  {"freq_high", spec.scene.freq_high},
                  {"contrast", spec.scene.contrast},
                  {"anisotropy", spec.scene.anisotropy},
                  {"seed", spec.scene.seed}};
  doc["trajectory"] = {
      {"kind", spec.trajectory.kind == TrajectorySpec::Kind::straight ? "straight" : "fig8"},
      {"span", spec.trajectory.span},
      {"frames", spec.trajectory.frames},
      {"frame_rate", spec.trajectory.frame_rate}};
  doc["lk"] = {{"window", spec.lk.window},
               {"max_level", spec.lk.max_level},
               {"max_iters", spec.lk.max_iters},
               {"eps", spec.lk.eps}};
  doc["structure"] = {{"window", spec.effective_structure_window()},
                      {"sigma", spec.effective_structure_sigma()}};
  doc["sparse_stride"] = spec.sparse_stride;
  doc["products"] = {{"dense", spec.with_dense}, {"sparse", spec.with_sparse}};
  doc["pairs"] = spec.trajectory.frames - 1;
  return doc;
}

}  // namespace

void build_dataset(const DatasetSpec& spec, const std::string& out_dir) {
  spec.scene.validate();
  spec.trajectory.validate();
  spec.camera.validate();
  spec.lk.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("build_dataset: cannot create " + out_dir + ": " + ec.message());

  const std::vector<Pose> poses = make_trajectory(spec.trajectory);
  const int frames = spec.trajectory.frames;

  std::vector<Image> images(frames);
  std::vector<DepthMap> depths(frames);
  parallel_for(0, frames, [&](int k) {
    auto [img, depth] = render_frame(spec.scene, spec.camera, poses[k]);
    images[k] = quantize_8bit(img);
    depths[k] = std::move(depth);
    save_pgm(images[k], frame_path(out_dir, k));
    save_depth_map(depths[k], depth_path(out_dir, k));
  });

  std::vector<Eigen::Vector2d> all_pixels;
  all_pixels.reserve(static_cast<size_t>(spec.camera.width) * spec.camera.height);
  for (int y = 0; y < spec.camera.height; ++y)
    for (int x = 0; x < spec.camera.width; ++x) all_pixels.emplace_back(x, y);
  const std::vector<Eigen::Vector2d> sparse_pts = grid_points(
      spec.camera.width, spec.camera.height, spec.sparse_stride, spec.lk.window / 2 + 2);

  for (int k = 0; k + 1 < frames; ++k) {
    const StructureField structure = structure_field(
        images[k], spec.effective_structure_window(), spec.effective_structure_sigma());
    save_structure_field(structure, structure_path(out_dir, k));

    const FlowField gt =
        ground_truth_flow(poses[k + 1], poses[k], all_pixels, depths[k], spec.camera);
    save_flow_field(gt, gtflow_path(out_dir, k));

    if (spec.with_dense)
      save_flow_field(dense_flow(images[k], images[k + 1], spec.lk), dense_flow_path(out_dir, k));
    if (spec.with_sparse)
      save_flow_field(lucas_kanade(images[k], images[k + 1], sparse_pts, spec.lk),
                      sparse_flow_path(out_dir, k));
  }

  save_trajectory_csv(truth_path(out_dir), poses);
  std::ofstream out(manifest_path(out_dir));
  if (!out) throw DataError("build_dataset: cannot write manifest in " + out_dir);
  out << manifest_json(spec).dump(2) << "\n";
}

DatasetSpec load_manifest(const std::string& dir) {
  std::ifstream in(manifest_path(dir));
  if (!in) throw DataError("load_manifest: cannot open " + manifest_path(dir));
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_manifest: parse error in " + dir + ": " + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "lcmflow-dataset-v1")
      throw DataError("load_manifest: unknown format in " + dir);
    DatasetSpec spec;
    spec.camera.width = doc.at("camera").at("width").get<int>();
    spec.camera.height = doc.at("camera").at("height").get<int>();
    spec.camera.horizontal_fov = doc.at("camera").at("horizontal_fov").get<double>();
    spec.scene.plane_distance = doc.at("scene").at("plane_distance").get<double>();
    spec.scene.freq_low = doc.at("scene").at("freq_low").get<double>();
    spec.scene.freq_high = doc.at("scene").at("freq_high").get<double>();
    spec.scene.contrast = doc.at("scene").at("contrast").get<double>();
    spec.scene.anisotropy = doc.at("scene").at("anisotropy").get<double>();
    spec.scene.seed = doc.at("scene").at("seed").get<uint64_t>();
    const std::string kind = doc.at("trajectory").at("kind").get<std::string>();
    if (kind == "straight")
      spec.trajectory.kind = TrajectorySpec::Kind::straight;
    else if (kind == "fig8")
      spec.trajectory.kind = TrajectorySpec::Kind::fig8;
    else
      throw DataError("load_manifest: unknown trajectory kind " + kind);
    spec.trajectory.span = doc.at("trajectory").at("span").get<double>();
    spec.trajectory.frames = doc.at("trajectory").at("frames").get<int>();
    spec.trajectory.frame_rate = doc.at("trajectory").at("frame_rate").get<double>();
    spec.lk.window = doc.at("lk").at("window").get<int>();
    spec.lk.max_level = doc.at("lk").at("max_level").get<int>();
    spec.lk.max_iters = doc.at("lk").at("max_iters").get<int>();
    spec.lk.eps = doc.at("lk").at("eps").get<double>();
    spec.structure_window = doc.at("structure").at("window").get<int>();
    spec.structure_sigma = doc.at("structure").at("sigma").get<double>();
    spec.sparse_stride = doc.at("sparse_stride").get<int>();
    spec.with_dense = doc.at("products").at("dense").get<bool>();
    spec.with_sparse = doc.at("products").at("sparse").get<bool>();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_manifest: missing field in " + dir + ": " + e.what());
  }
}

}  // namespace lcmflow
