#include "lcmflow/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "lcmflow/egomotion.hpp"
#include "lcmflow/likelihood.hpp"
#include "lcmflow/synth.hpp"

namespace lcmflow::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

// run.json: full config echo, seed, and a content hash per artifact.
void write_run_json(const std::string& out_dir, const std::string& command, const json& config,
                    const std::vector<std::string>& artifacts) {
  json doc;
  doc["command"] = command;
  doc["config"] = config;
  if (config.contains("seed")) doc["seed"] = config["seed"];
  json hashes = json::object();
  for (const std::string& rel : artifacts) hashes[rel] = fnv1a_file(out_dir + "/" + rel);
  doc["artifacts"] = hashes;
  std::ofstream out(out_dir + "/run.json");
  if (!out) throw DataError("cannot write " + out_dir + "/run.json");
  out << doc.dump(2) << "\n";
}

std::vector<std::string> dataset_artifacts(const std::string& dir) {
  std::vector<std::string> rel;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name == "run.json") continue;
    rel.push_back(name);
  }
  std::sort(rel.begin(), rel.end());
  return rel;
}

// A dataset argument may be a single scene or a group root listing scenes.
std::vector<std::string> expand_dataset_dirs(const std::vector<std::string>& paths) {
  std::vector<std::string> dirs;
  for (const std::string& path : paths) {
    const std::string group = path + "/group.json";
    if (fs::exists(group)) {
      std::ifstream in(group);
      json doc;
      try {
        in >> doc;
      } catch (const json::exception& e) {
        throw DataError("bad group manifest " + group + ": " + e.what());
      }
      for (const auto& scene : doc.at("scenes"))
        dirs.push_back(path + "/" + scene.get<std::string>());
    } else if (fs::exists(manifest_path(path))) {
      dirs.push_back(path);
    } else {
      throw DataError("no dataset manifest found under " + path);
    }
  }
  return dirs;
}

enum class FlowSource { dense, sparse, gt };

FlowSource parse_flow_source(const std::string& name, bool allow_gt) {
  if (name == "dense") return FlowSource::dense;
  if (name == "sparse") return FlowSource::sparse;
  if (allow_gt && name == "gt") return FlowSource::gt;
  throw CLI::ValidationError("--flow", "unknown flow source '" + name + "'");
}

std::string flow_file(const std::string& dir, FlowSource source, int pair) {
  switch (source) {
    case FlowSource::dense: return dense_flow_path(dir, pair);
    case FlowSource::sparse: return sparse_flow_path(dir, pair);
    case FlowSource::gt: return gtflow_path(dir, pair);
  }
  return {};
}

// Eigenbasis errors of measured flow against ground-truth flow, pooled over
// every pair of every dataset.
TrainingSet assemble_training(const std::vector<std::string>& dirs, FlowSource source,
                              int max_pairs) {
  TrainingSet data;
  for (const std::string& dir : dirs) {
    const DatasetSpec spec = load_manifest(dir);
    const int w = spec.camera.width;
    int pairs = spec.trajectory.frames - 1;
    if (max_pairs > 0) pairs = std::min(pairs, max_pairs);
    for (int k = 0; k < pairs; ++k) {
      const FlowField measured = load_flow_field(flow_file(dir, source, k));
      const FlowField gt = load_flow_field(gtflow_path(dir, k));
      const StructureField structure =
          load_structure_field(structure_path(dir, k), w, spec.camera.height);
      for (size_t i = 0; i < measured.size(); ++i) {
        if (!measured.valid[i]) continue;
        const int px = static_cast<int>(std::lround(measured.x[i]));
        const int py = static_cast<int>(std::lround(measured.y[i]));
        const size_t gi = static_cast<size_t>(py) * w + px;
        if (gi >= gt.size() || !gt.valid[gi]) continue;
        const Eigen::Vector2d err(measured.dx[i] - gt.dx[gi], measured.dy[i] - gt.dy[gi]);
        const Eigen::Vector2d z = to_eigenbasis(err, structure.angle.at(px, py));
        data.push(z.x(), structure.t_major.at(px, py));
        data.push(z.y(), structure.t_minor.at(px, py));
      }
    }
  }
  return data;
}

double percentile_of(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  if (v.empty()) return 0.0;
  const double pos = q * static_cast<double>(v.size() - 1);
  const size_t i = static_cast<size_t>(pos);
  const size_t j = std::min(i + 1, v.size() - 1);
  return v[i] + (pos - i) * (v[j] - v[i]);
}

// fixed-stride thinning for the diagnostic statistics
std::vector<double> cap_samples(const std::vector<double>& v, size_t cap) {
  if (cap == 0 || v.size() <= cap) return v;
  const size_t stride = (v.size() + cap - 1) / cap;
  std::vector<double> out;
  out.reserve(v.size() / stride + 1);
  for (size_t i = 0; i < v.size(); i += stride) out.push_back(v[i]);
  return out;
}

struct BinGof {
  std::string ks_lcm = "nan", ks_gauss = "nan", ks_loglogistic = "nan";
};

// K-S for the three families on one texture bin. The LCM enters through the
// probability integral transform of each sample under its own texture-scheduled
// parameters, so one uniform-against-identity statistic covers the varying
// parameters; the baselines are fitted per bin.
BinGof bin_goodness_of_fit(const std::vector<double>& bin_z, const std::vector<double>& bin_u,
                           size_t ks_cap) {
  BinGof gof;
  const std::vector<double> z = cap_samples(bin_z, ks_cap);
  const std::vector<double> u = cap_samples(bin_u, ks_cap);
  gof.ks_lcm = fmt("%.6g", ks_statistic(u, [](double x) { return std::clamp(x, 0.0, 1.0); }));
  const GaussianFit g = fit_gaussian_zero_mean(bin_z);
  if (!g.degenerate)
    gof.ks_gauss =
        fmt("%.6g", ks_statistic(z, [&g](double x) { return gaussian_cdf(x, g.sigma); }));
  std::vector<double> mags(z.size());
  for (size_t i = 0; i < z.size(); ++i) mags[i] = std::abs(z[i]);
  const LogLogisticFit ll = fit_log_logistic_magnitude(cap_samples(mags, 30000));
  if (!ll.degenerate)
    gof.ks_loglogistic =
        fmt("%.6g", ks_statistic(mags, [&ll](double x) { return log_logistic_cdf(x, ll); }));
  return gof;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out;
  std::string traj = "straight";
  int frames = 200;
  double span = 30.0;
  double frame_rate = 60.0;
  uint64_t seed = 1;
  int width = 640, height = 360;
  double fov_deg = 120.0;
  double plane_distance = 5.0;
  double freq_low = 0.4, freq_high = 2.0;
  double contrast = 60.0;
  double aniso = 1.0;
  int scenes = 1;
  double contrast_min = 0.0, contrast_max = 0.0;
  int lk_window = 21, lk_max_level = 3, lk_iters = 30;
  double lk_eps = 0.01;
  int structure_window = 0;
  int sparse_stride = 8;
  std::string products = "gt,dense,sparse";
};

json synth_config(const SynthArgs& a) {
  return {{"out", a.out},           {"traj", a.traj},
          {"frames", a.frames},     {"span", a.span},
          {"frame_rate", a.frame_rate}, {"seed", a.seed},
          {"width", a.width},       {"height", a.height},
          {"fov_deg", a.fov_deg},   {"plane_distance", a.plane_distance},
          {"freq_low", a.freq_low}, {"freq_high", a.freq_high},
          {"contrast", a.contrast}, {"aniso", a.aniso},
          {"scenes", a.scenes},
          {"contrast_min", a.contrast_min}, {"contrast_max", a.contrast_max},
          {"lk_window", a.lk_window}, {"lk_max_level", a.lk_max_level},
          {"lk_iters", a.lk_iters}, {"lk_eps", a.lk_eps},
          {"structure_window", a.structure_window}, {"sparse_stride", a.sparse_stride},
          {"products", a.products}};
}

int run_synth(const SynthArgs& a) {
  DatasetSpec spec;
  if (a.traj == "straight")
    spec.trajectory.kind = TrajectorySpec::Kind::straight;
  else if (a.traj == "fig8")
    spec.trajectory.kind = TrajectorySpec::Kind::fig8;
  else
    throw DataError("unknown trajectory kind '" + a.traj + "' (straight|fig8)");
  spec.trajectory.frames = a.frames;
  spec.trajectory.span = a.span;
  spec.trajectory.frame_rate = a.frame_rate;
  spec.camera.width = a.width;
  spec.camera.height = a.height;
  spec.camera.horizontal_fov = a.fov_deg * M_PI / 180.0;
  spec.scene.plane_distance = a.plane_distance;
  spec.scene.freq_low = a.freq_low;
  spec.scene.freq_high = a.freq_high;
  spec.scene.contrast = a.contrast;
  spec.scene.anisotropy = a.aniso;
  spec.scene.seed = a.seed;
  spec.lk.window = a.lk_window;
  spec.lk.max_level = a.lk_max_level;
  spec.lk.max_iters = a.lk_iters;
  spec.lk.eps = a.lk_eps;
  spec.structure_window = a.structure_window;
  spec.sparse_stride = a.sparse_stride;
  spec.with_dense = a.products.find("dense") != std::string::npos;
  spec.with_sparse = a.products.find("sparse") != std::string::npos;

  fs::create_directories(a.out);
  if (a.scenes == 1) {
    build_dataset(spec, a.out);
    write_run_json(a.out, "synth", synth_config(a), dataset_artifacts(a.out));
    return 0;
  }

  // contrast sweep across sibling scene datasets
  const double lo = a.contrast_min > 0.0 ? a.contrast_min : std::max(a.contrast / 8.0, 1.0);
  const double hi = a.contrast_max > 0.0 ? a.contrast_max : std::min(a.contrast * 2.0, 127.0);
  json scenes_list = json::array();
  std::vector<std::string> artifacts;
  for (int i = 0; i < a.scenes; ++i) {
    const double frac = a.scenes == 1 ? 0.0 : static_cast<double>(i) / (a.scenes - 1);
    DatasetSpec scene_spec = spec;
    scene_spec.scene.contrast = lo * std::pow(hi / lo, frac);
    scene_spec.scene.seed = a.seed + 1000ull * static_cast<uint64_t>(i);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%02d", i);
    build_dataset(scene_spec, a.out + "/" + name);
    scenes_list.push_back(name);
    artifacts.push_back(std::string(name) + "/manifest.json");
  }
  json group;
  group["format"] = "lcmflow-dataset-group-v1";
  group["scenes"] = scenes_list;
  std::ofstream out(a.out + "/group.json");
  out << group.dump(2) << "\n";
  artifacts.push_back("group.json");
  write_run_json(a.out, "synth", synth_config(a), artifacts);
  return 0;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::vector<std::string> datasets;
  std::string flow = "dense";
  std::string out;
  std::string bins_csv;
  int knots = 8;
  int max_fit_samples = 30000;
  int min_bin_count = 100;
  int restarts = 5;
  int joint_evals_per_dim = 150;
  int max_pairs = 0;
  int max_ks_samples = 200000;
  uint64_t seed = 1;
};

void bin_by_texture(const ParamLut& lut, const TrainingSet& data,
                    std::vector<std::vector<double>>* bin_z,
                    std::vector<std::vector<double>>* bin_t) {
  const std::vector<double> edges = lut_bin_edges(lut.knots);
  bin_z->assign(lut.knots.size(), {});
  bin_t->assign(lut.knots.size(), {});
  for (size_t i = 0; i < data.size(); ++i) {
    const double lt = std::log10(std::max(data.t[i], kTextureFloor));
    const size_t bin = static_cast<size_t>(
        std::upper_bound(edges.begin() + 1, edges.end() - 1, lt) - (edges.begin() + 1));
    (*bin_z)[bin].push_back(data.z[i]);
    (*bin_t)[bin].push_back(data.t[i]);
  }
}

// probability integral transform under the texture-scheduled model
std::vector<double> pit_values(const std::vector<double>& z, const std::vector<double>& t,
                               const ParamLut& lut, size_t cap) {
  const std::vector<double> zc = cap_samples(z, cap);
  const std::vector<double> tc = cap_samples(t, cap);
  std::vector<double> u(zc.size());
  for (size_t i = 0; i < zc.size(); ++i) u[i] = lcm_cdf(zc[i], lut_lookup(tc[i], lut));
  return u;
}

void write_bin_diagnostics(const std::string& path, const ParamLut& lut, const TrainingSet& data,
                           int min_bin_count, size_t ks_cap) {
  const std::vector<double> edges = lut_bin_edges(lut.knots);
  std::vector<std::vector<double>> bin_z, bin_t;
  bin_by_texture(lut, data, &bin_z, &bin_t);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "bin_lo,bin_hi,knot,n,median_abs_z,beta,gamma,w_l,ks_lcm,ks_gauss,ks_loglogistic\n";
  for (size_t k = 0; k < lut.knots.size(); ++k) {
    const double lo = std::isinf(edges[k]) ? 0.0 : std::pow(10.0, edges[k]);
    const double hi = std::isinf(edges[k + 1]) ? INFINITY : std::pow(10.0, edges[k + 1]);
    const size_t n = bin_z[k].size();
    BinGof gof;
    std::string med = "nan";
    if (n >= static_cast<size_t>(min_bin_count)) {
      std::vector<double> mags(n);
      for (size_t i = 0; i < n; ++i) mags[i] = std::abs(bin_z[k][i]);
      med = fmt("%.6g", percentile_of(mags, 0.5));
      gof = bin_goodness_of_fit(bin_z[k], pit_values(bin_z[k], bin_t[k], lut, ks_cap), ks_cap);
    }
    out << fmt("%.6g", lo) << "," << fmt("%.6g", hi) << "," << fmt("%.6g", lut.knots[k]) << ","
        << n << "," << med << "," << fmt("%.9g", lut.entries[k].beta) << ","
        << fmt("%.9g", lut.entries[k].gamma) << "," << fmt("%.9g", lut.entries[k].w_l) << ","
        << gof.ks_lcm << "," << gof.ks_gauss << "," << gof.ks_loglogistic << "\n";
  }
}

int run_calibrate(const CalibrateArgs& a) {
  const std::vector<std::string> dirs = expand_dataset_dirs(a.datasets);
  const FlowSource source = parse_flow_source(a.flow, false);
  const TrainingSet data = assemble_training(dirs, source, a.max_pairs);
  if (data.size() == 0) throw DataError("no training samples found in the given datasets");

  // knots span the activated texture range seen in training
  std::vector<double> t_sorted = data.t;
  std::sort(t_sorted.begin(), t_sorted.end());
  auto pct = [&t_sorted](double q) {
    const double pos = q * static_cast<double>(t_sorted.size() - 1);
    const size_t i = static_cast<size_t>(pos);
    const size_t j = std::min(i + 1, t_sorted.size() - 1);
    return t_sorted[i] + (pos - i) * (t_sorted[j] - t_sorted[i]);
  };
  const double lo = std::max(pct(0.01), kTextureFloor * 10.0);
  const double hi = std::max(pct(0.99), lo * 1.0001);
  std::vector<double> knots;
  for (int k = 0; k < a.knots; ++k) {
    const double frac = a.knots == 1 ? 0.5 : static_cast<double>(k) / (a.knots - 1);
    knots.push_back(lo * std::pow(hi / lo, frac));
  }

  FitOptions options;
  options.restarts = a.restarts;
  options.joint_evals_per_dim = a.joint_evals_per_dim;
  options.max_fit_samples_per_bin = static_cast<size_t>(std::max(a.max_fit_samples, 0));
  options.min_bin_count = a.min_bin_count;
  options.seed = a.seed;
  FitReport report;
  const ParamLut lut = fit_lut(data, knots, options, &report);
  for (size_t k = 0; k < report.dropped_knots.size(); ++k)
    std::cerr << "calibrate: dropped starved knot at t=" << report.dropped_knots[k] << "\n";

  const fs::path out_path(a.out);
  fs::create_directories(out_path.parent_path().empty() ? "." : out_path.parent_path().string());
  lut.save_json(a.out);
  const std::string bins = a.bins_csv.empty()
                               ? (out_path.parent_path() / "bins.csv").string()
                               : a.bins_csv;
  write_bin_diagnostics(bins, lut, data, a.min_bin_count,
                        static_cast<size_t>(std::max(a.max_ks_samples, 0)));

  json config{{"datasets", a.datasets}, {"flow", a.flow},
              {"out", a.out},           {"bins_csv", bins},
              {"knots", a.knots},       {"max_fit_samples", a.max_fit_samples},
              {"joint_evals_per_dim", a.joint_evals_per_dim},
              {"min_bin_count", a.min_bin_count}, {"restarts", a.restarts},
              {"max_pairs", a.max_pairs}, {"seed", a.seed}};
  config["j_init"] = report.j_init;
  config["j_final"] = report.j_final;
  config["dropped_knots"] = report.dropped_knots;
  const std::string out_dir =
      out_path.parent_path().empty() ? "." : out_path.parent_path().string();
  std::vector<std::string> artifacts{out_path.filename().string()};
  if (fs::path(bins).parent_path() == out_path.parent_path())
    artifacts.push_back(fs::path(bins).filename().string());
  write_run_json(out_dir, "calibrate", config, artifacts);
  return 0;
}

// ---------------------------------------------------------------------------
// evalfit

struct EvalfitArgs {
  std::vector<std::string> datasets;
  std::string lut_path;
  std::string out;
  std::string flow = "dense";
  int max_pairs = 0;
  int min_bin_count = 100;
  int max_ks_samples = 200000;
};

int run_evalfit(const EvalfitArgs& a) {
  const ParamLut lut = ParamLut::load_json(a.lut_path);
  const std::vector<std::string> dirs = expand_dataset_dirs(a.datasets);
  const TrainingSet data = assemble_training(dirs, parse_flow_source(a.flow, false), a.max_pairs);
  if (data.size() == 0) throw DataError("no samples found in the given datasets");

  const std::vector<double> edges = lut_bin_edges(lut.knots);
  std::vector<std::vector<double>> bin_z, bin_t;
  bin_by_texture(lut, data, &bin_z, &bin_t);

  const fs::path out_path(a.out);
  if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
  std::ofstream out(a.out);
  if (!out) throw DataError("cannot write " + a.out);
  out << "bin_lo,bin_hi,n,ks_lcm,ks_gauss,ks_loglogistic\n";
  const size_t cap = static_cast<size_t>(std::max(a.max_ks_samples, 0));
  for (size_t k = 0; k < lut.knots.size(); ++k) {
    const double lo = std::isinf(edges[k]) ? 0.0 : std::pow(10.0, edges[k]);
    const double hi = std::isinf(edges[k + 1]) ? INFINITY : std::pow(10.0, edges[k + 1]);
    const size_t n = bin_z[k].size();
    BinGof gof;
    if (n >= static_cast<size_t>(a.min_bin_count))
      gof = bin_goodness_of_fit(bin_z[k], pit_values(bin_z[k], bin_t[k], lut, cap), cap);
    out << fmt("%.6g", lo) << "," << fmt("%.6g", hi) << "," << n << "," << gof.ks_lcm << ","
        << gof.ks_gauss << "," << gof.ks_loglogistic << "\n";
  }
  out.close();

  json config{{"datasets", a.datasets}, {"lut", a.lut_path},          {"out", a.out},
              {"flow", a.flow},         {"max_pairs", a.max_pairs},   {"min_bin_count", a.min_bin_count},
              {"max_ks_samples", a.max_ks_samples}};
  const std::string out_dir =
      out_path.parent_path().empty() ? "." : out_path.parent_path().string();
  write_run_json(out_dir, "evalfit", config, {out_path.filename().string()});
  return 0;
}

// ---------------------------------------------------------------------------
// egomotion

struct EgomotionArgs {
  std::string dataset;
  std::string estimator;
  std::string flow = "dense";
  std::string out_dir;
  std::string lut_path;
  uint64_t seed = 0;
  int max_samples = 800;
  double texture_cutoff = -1.0;  // <0: pick the mode default
  double ransac_threshold = 0.5;
  double confidence_level = 0.9;
  double sac_confidence = 0.99;
  int sac_iters = 100;
  int hyp_evals = 600;
  int refit_evals = 1200;
};

int run_egomotion(const EgomotionArgs& a) {
  Estimator estimator;
  if (a.estimator == "ransac")
    estimator = Estimator::ransac;
  else if (a.estimator == "lcmsac")
    estimator = Estimator::lcmsac;
  else
    throw DataError("unknown estimator '" + a.estimator + "' (ransac|lcmsac)");

  const FlowSource source = parse_flow_source(a.flow, true);
  ParamLut lut;
  if (estimator == Estimator::lcmsac) {
    if (a.lut_path.empty()) throw DataError("egomotion: --lut is required for lcmsac");
    lut = ParamLut::load_json(a.lut_path);
  }

  const DatasetSpec spec = load_manifest(a.dataset);
  const std::vector<Pose> truth = load_trajectory_csv(truth_path(a.dataset));
  if (static_cast<int>(truth.size()) != spec.trajectory.frames)
    throw DataError("egomotion: truth.csv does not match manifest frame count");

  SacConfig config;
  config.max_iters = a.sac_iters;
  config.confidence = a.sac_confidence;
  config.inlier_threshold =
      estimator == Estimator::ransac ? a.ransac_threshold : a.confidence_level;
  config.texture_cutoff = a.texture_cutoff >= 0.0
                              ? a.texture_cutoff
                              : (estimator == Estimator::lcmsac && source == FlowSource::dense
                                     ? 50.0
                                     : 0.0);
  config.seed = a.seed;
  config.hypothesis_opt.max_evals = a.hyp_evals;
  config.refit_opt.max_evals = a.refit_evals;
  config.hypothesis_opt.seed = splitmix64(a.seed + 17);
  config.refit_opt.seed = splitmix64(a.seed + 29);

  auto frames = [&](int k) {
    OdometryFrame frame;
    frame.flow = load_flow_field(flow_file(a.dataset, source, k));
    frame.structure =
        load_structure_field(structure_path(a.dataset, k), spec.camera.width, spec.camera.height);
    frame.depth = load_depth_map(depth_path(a.dataset, k), spec.camera.width, spec.camera.height);
    return frame;
  };

  const OdometryStats stats =
      run_odometry(truth, spec.camera, frames, estimator, config,
                   estimator == Estimator::lcmsac ? &lut : nullptr,
                   static_cast<size_t>(std::max(a.max_samples, 0)));

  fs::create_directories(a.out_dir);
  save_trajectory_csv(a.out_dir + "/trajectory.csv", stats.estimated);

  json metrics;
  metrics["estimator"] = a.estimator;
  metrics["flow"] = a.flow;
  metrics["seed"] = a.seed;
  metrics["frames"] = spec.trajectory.frames;
  metrics["trajectory_kind"] =
      spec.trajectory.kind == TrajectorySpec::Kind::straight ? "straight" : "fig8";
  metrics["drift_percent"] = stats.drift_percent;
  metrics["path_length_m"] = stats.path_length_m;
  metrics["final_error_m"] = stats.final_error_m;
  metrics["failures"] = stats.failures;
  double ratio_sum = 0.0;
  for (double r : stats.inlier_ratio) ratio_sum += r;
  metrics["mean_inlier_ratio"] =
      stats.inlier_ratio.empty() ? 0.0 : ratio_sum / stats.inlier_ratio.size();
  metrics["per_frame_error_m"] = stats.frame_error_m;
  metrics["per_frame_inlier_ratio"] = stats.inlier_ratio;
  std::ofstream mout(a.out_dir + "/metrics.json");
  if (!mout) throw DataError("cannot write metrics.json in " + a.out_dir);
  mout << metrics.dump(2) << "\n";
  mout.close();

  json config_json{{"dataset", a.dataset},
                   {"estimator", a.estimator},
                   {"flow", a.flow},
                   {"out_dir", a.out_dir},
                   {"lut", a.lut_path},
                   {"seed", a.seed},
                   {"max_samples", a.max_samples},
                   {"texture_cutoff", config.texture_cutoff},
                   {"ransac_threshold", a.ransac_threshold},
                   {"confidence_level", a.confidence_level},
                   {"sac_confidence", a.sac_confidence},
                   {"sac_iters", a.sac_iters},
                   {"hyp_evals", a.hyp_evals},
                   {"refit_evals", a.refit_evals}};
  write_run_json(a.out_dir, "egomotion", config_json, {"metrics.json", "trajectory.csv"});
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  std::vector<std::string> metrics;
  std::string out;
};

int run_report(const ReportArgs& a) {
  struct Row {
    std::string label, estimator, flow, traj;
    double drift = 0.0;
  };
  std::vector<Row> rows;
  for (const std::string& path : a.metrics) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open metrics file " + path);
    json doc;
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw DataError("bad metrics file " + path + ": " + e.what());
    }
    Row row;
    row.label = fs::path(path).parent_path().filename().string();
    if (row.label.empty()) row.label = path;
    row.estimator = doc.value("estimator", "?");
    row.flow = doc.value("flow", "?");
    row.traj = doc.value("trajectory_kind", "?");
    row.drift = doc.value("drift_percent", 0.0);
    rows.push_back(row);
  }
  if (rows.empty()) throw DataError("report: no metrics files given");

  const fs::path out_path(a.out);
  if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
  std::ofstream out(a.out);
  if (!out) throw DataError("cannot write " + a.out);
  out << "label,estimator,flow,trajectory,drift_percent,delta_vs_first_percent\n";
  char line[256];
  std::printf("%-24s %-8s %-7s %-9s %12s %12s\n", "label", "estim.", "flow", "traj", "drift[%]",
              "delta[%]");
  for (const Row& row : rows) {
    const double delta = row.drift - rows.front().drift;
    out << row.label << "," << row.estimator << "," << row.flow << "," << row.traj << ","
        << fmt("%.3f", row.drift) << "," << fmt("%.3f", delta) << "\n";
    std::snprintf(line, sizeof(line), "%-24s %-8s %-7s %-9s %12.3f %12.3f", row.label.c_str(),
                  row.estimator.c_str(), row.flow.c_str(), row.traj.c_str(), row.drift, delta);
    std::printf("%s\n", line);
  }
  out.close();

  json config{{"metrics", a.metrics}, {"out", a.out}};
  const std::string out_dir =
      out_path.parent_path().empty() ? "." : out_path.parent_path().string();
  write_run_json(out_dir, "report", config, {out_path.filename().string()});
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"texture-scheduled optical-flow likelihood pipeline"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "render a synthetic dataset");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--traj", synth_args.traj, "trajectory kind (straight|fig8)");
  synth->add_option("--frames", synth_args.frames, "number of frames");
  synth->add_option("--span", synth_args.span, "trajectory extent [m]");
  synth->add_option("--frame-rate", synth_args.frame_rate, "frame rate [Hz]");
  synth->add_option("--seed", synth_args.seed, "scene seed");
  synth->add_option("--width", synth_args.width, "image width [px]");
  synth->add_option("--height", synth_args.height, "image height [px]");
  synth->add_option("--fov-deg", synth_args.fov_deg, "horizontal field of view [deg]");
  synth->add_option("--plane-distance", synth_args.plane_distance, "scene plane distance [m]");
  synth->add_option("--freq-low", synth_args.freq_low, "texture band low [cycles/m]");
  synth->add_option("--freq-high", synth_args.freq_high, "texture band high [cycles/m]");
  synth->add_option("--contrast", synth_args.contrast, "texture contrast (0,127]");
  synth->add_option("--aniso", synth_args.aniso, "texture anisotropy (lattice stretch, >= 1)");
  synth->add_option("--scenes", synth_args.scenes, "number of contrast-sweep scenes");
  synth->add_option("--contrast-min", synth_args.contrast_min, "sweep start contrast");
  synth->add_option("--contrast-max", synth_args.contrast_max, "sweep end contrast");
  synth->add_option("--lk-window", synth_args.lk_window, "LK window [px]");
  synth->add_option("--lk-max-level", synth_args.lk_max_level, "LK max pyramid level");
  synth->add_option("--lk-iters", synth_args.lk_iters, "LK max iterations");
  synth->add_option("--lk-eps", synth_args.lk_eps, "LK update threshold [px]");
  synth->add_option("--structure-window", synth_args.structure_window,
                    "structure tensor window (default: LK window)");
  synth->add_option("--sparse-stride", synth_args.sparse_stride, "sparse grid stride [px]");
  synth->add_option("--products", synth_args.products, "measured flow products (gt,dense,sparse)");

  CalibrateArgs cal_args;
  CLI::App* cal = app.add_subcommand("calibrate", "fit the likelihood parameter table");
  cal->add_option("datasets", cal_args.datasets, "dataset directories")->required();
  cal->add_option("--flow", cal_args.flow, "flow source (dense|sparse)");
  cal->add_option("--out", cal_args.out, "output LUT JSON path")->required();
  cal->add_option("--bins-csv", cal_args.bins_csv, "bin diagnostics CSV path");
  cal->add_option("--knots", cal_args.knots, "number of LUT knots");
  cal->add_option("--max-fit-samples", cal_args.max_fit_samples,
                  "per-bin sample cap for the optimizer (0 = all)");
  cal->add_option("--min-bin-count", cal_args.min_bin_count, "starved-knot threshold");
  cal->add_option("--restarts", cal_args.restarts, "optimizer restarts");
  cal->add_option("--joint-evals-per-dim", cal_args.joint_evals_per_dim,
                  "joint polish budget per parameter dimension");
  cal->add_option("--max-pairs", cal_args.max_pairs, "frame-pair cap per dataset (0 = all)");
  cal->add_option("--max-ks-samples", cal_args.max_ks_samples,
                  "per-bin sample cap for goodness-of-fit statistics");
  cal->add_option("--seed", cal_args.seed, "optimizer seed");

  EvalfitArgs eval_args;
  CLI::App* eval = app.add_subcommand("evalfit", "per-bin goodness-of-fit table");
  eval->add_option("datasets", eval_args.datasets, "dataset directories")->required();
  eval->add_option("--lut", eval_args.lut_path, "LUT JSON path")->required();
  eval->add_option("--out", eval_args.out, "output CSV path")->required();
  eval->add_option("--flow", eval_args.flow, "flow source (dense|sparse)");
  eval->add_option("--max-pairs", eval_args.max_pairs, "frame-pair cap per dataset (0 = all)");
  eval->add_option("--min-bin-count", eval_args.min_bin_count, "bins below this emit NaN");
  eval->add_option("--max-ks-samples", eval_args.max_ks_samples,
                   "per-bin sample cap for goodness-of-fit statistics");

  EgomotionArgs ego_args;
  CLI::App* ego = app.add_subcommand("egomotion", "sequential pose estimation benchmark");
  ego->add_option("dataset", ego_args.dataset, "dataset directory")->required();
  ego->add_option("--estimator", ego_args.estimator, "ransac|lcmsac")->required();
  ego->add_option("--flow", ego_args.flow, "flow source (dense|sparse|gt)");
  ego->add_option("--out", ego_args.out_dir, "output directory")->required();
  ego->add_option("--lut", ego_args.lut_path, "LUT JSON (required for lcmsac)");
  ego->add_option("--seed", ego_args.seed, "estimator seed");
  ego->add_option("--max-samples", ego_args.max_samples, "flow sample cap per frame (0 = all)");
  ego->add_option("--texture-cutoff", ego_args.texture_cutoff,
                  "LCMSAC texture cutoff (default 50 for dense, 0 otherwise)");
  ego->add_option("--ransac-threshold", ego_args.ransac_threshold, "RANSAC inlier gate [px]");
  ego->add_option("--confidence-level", ego_args.confidence_level,
                  "LCMSAC inlier confidence region level");
  ego->add_option("--sac-confidence", ego_args.sac_confidence, "adaptive stop confidence");
  ego->add_option("--sac-iters", ego_args.sac_iters, "hypothesis iteration cap");
  ego->add_option("--hyp-evals", ego_args.hyp_evals, "optimizer budget per hypothesis");
  ego->add_option("--refit-evals", ego_args.refit_evals, "optimizer budget for the refit");

  ReportArgs rep_args;
  CLI::App* rep = app.add_subcommand("report", "summarize egomotion metrics files");
  rep->add_option("metrics", rep_args.metrics, "metrics.json files")->required();
  rep->add_option("--out", rep_args.out, "output CSV path")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth->parsed()) return run_synth(synth_args);
    if (cal->parsed()) return run_calibrate(cal_args);
    if (eval->parsed()) return run_evalfit(eval_args);
    if (ego->parsed()) return run_egomotion(ego_args);
    if (rep->parsed()) return run_report(rep_args);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace lcmflow::cli
