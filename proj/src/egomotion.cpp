#include "lcmflow/egomotion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lcmflow {

namespace {

// NLL charged to each component whose projection leaves the camera frustum;
// keeps poses that push measurements behind the camera from looking good.
constexpr double kInvalidProjectionPenalty = 1e3;

}  // namespace

EgoProblem EgoProblem::assemble(const Pose& prev_pose, const FlowField& flow,
                                const StructureField& structure, const DepthMap& depth,
                                const CameraModel& camera, size_t max_samples) {
  EgoProblem problem;
  problem.prev_pose = prev_pose;
  problem.camera = camera;

  std::vector<size_t> usable;
  usable.reserve(flow.size());
  for (size_t i = 0; i < flow.size(); ++i) {
    if (!flow.valid[i]) continue;
    if (!sample_inverse_depth(depth, {flow.x[i], flow.y[i]})) continue;
    const int px = static_cast<int>(std::lround(flow.x[i]));
    const int py = static_cast<int>(std::lround(flow.y[i]));
    if (!structure.t_major.in_bounds(px, py)) continue;
    usable.push_back(i);
  }

  size_t stride = 1;
  if (max_samples > 0 && usable.size() > max_samples)
    stride = (usable.size() + max_samples - 1) / max_samples;

  problem.samples.reserve(usable.size() / stride + 1);
  for (size_t u = 0; u < usable.size(); u += stride) {
    const size_t i = usable[u];
    const int px = static_cast<int>(std::lround(flow.x[i]));
    const int py = static_cast<int>(std::lround(flow.y[i]));
    EgoSample s;
    s.pixel = {flow.x[i], flow.y[i]};
    s.measured = {flow.dx[i], flow.dy[i]};
    s.ray = pixel_to_ray(camera, s.pixel);
    s.inv_range = *sample_inverse_depth(depth, s.pixel) * s.ray.z();
    const double angle = structure.angle.at(px, py);
    s.cos_a = std::cos(angle);
    s.sin_a = std::sin(angle);
    s.t_major = structure.t_major.at(px, py);
    s.t_minor = structure.t_minor.at(px, py);
    problem.samples.push_back(s);
  }
  return problem;
}

namespace {

// Residual of sample s under relative transform T, in the image basis.
inline bool image_residual(const EgoSample& s, const Eigen::Isometry3d& T,
                           const CameraModel& camera, Eigen::Vector2d* out) {
  const Eigen::Vector3d q = T.linear() * s.ray + T.translation() * s.inv_range;
  if (!(q.z() > 0.0)) return false;
  const Eigen::Vector2d c = camera.principal_point();
  const double f = camera.focal();
  const double gu = c.x() + f * q.x() / q.z();
  const double gv = c.y() + f * q.y() / q.z();
  // measured minus predicted flow; the pixel cancels out of the prediction
  out->x() = s.measured.x() - (gu - s.pixel.x());
  out->y() = s.measured.y() - (gv - s.pixel.y());
  return true;
}

// Per-component log-density terms resolved once per problem/model pair.
struct NllContext {
  LikelihoodModel model;
  std::vector<LcmLogPdfTerms> major, minor;
  double gauss_norm = 0.0, inv_two_sigma_sq = 0.0;

  NllContext(const EgoProblem& problem, const LikelihoodModel& m) : model(m) {
    if (model.kind == LikelihoodModel::Kind::lcm) {
      if (!model.lut) throw std::invalid_argument("flow_nll: LCM model without a parameter table");
      major.reserve(problem.samples.size());
      minor.reserve(problem.samples.size());
      for (const EgoSample& s : problem.samples) {
        major.emplace_back(lut_lookup(s.t_major, *model.lut));
        minor.emplace_back(lut_lookup(s.t_minor, *model.lut));
      }
    } else {
      if (!(model.sigma > 0.0))
        throw std::invalid_argument("flow_nll: gaussian sigma must be positive");
      gauss_norm = std::log(model.sigma * std::sqrt(2.0 * M_PI));
      inv_two_sigma_sq = 0.5 / (model.sigma * model.sigma);
    }
  }

  double component_nll(size_t i, bool is_major, double z) const {
    if (model.kind == LikelihoodModel::Kind::lcm) return -(is_major ? major[i] : minor[i])(z);
    return inv_two_sigma_sq * z * z + gauss_norm;
  }
};

double nll_with_context(const Pose& x, const EgoProblem& problem, const NllContext& ctx,
                        const ComponentMask* mask) {
  const Eigen::Isometry3d T = relative_transform(x, problem.prev_pose);
  const size_t n = problem.samples.size();
  size_t active = n;
  if (mask) {
    active = 0;
    for (uint8_t b : *mask) active += b != 0;
  }
  if (active == 0) throw std::invalid_argument("flow_nll: no active samples");
  const double total = deterministic_sum(n, [&](size_t i) {
    const uint8_t bits = mask ? (*mask)[i] : uint8_t{3};
    if (bits == 0) return 0.0;
    const EgoSample& s = problem.samples[i];
    Eigen::Vector2d r;
    if (!image_residual(s, T, problem.camera, &r)) {
      const int k = !!(bits & 1) + !!(bits & 2);
      return kInvalidProjectionPenalty * k;
    }
    const double z1 = s.cos_a * r.x() + s.sin_a * r.y();
    const double z2 = -s.sin_a * r.x() + s.cos_a * r.y();
    double nll = 0.0;
    if (bits & 1) nll += ctx.component_nll(i, true, z1);
    if (bits & 2) nll += ctx.component_nll(i, false, z2);
    return nll;
  });
  return total;
}

}  // namespace

std::vector<EigenbasisError> eigen_errors(const Pose& x, const EgoProblem& problem,
                                          size_t* excluded) {
  const Eigen::Isometry3d T = relative_transform(x, problem.prev_pose);
  std::vector<EigenbasisError> errors;
  errors.reserve(problem.samples.size());
  size_t skipped = 0;
  for (const EgoSample& s : problem.samples) {
    Eigen::Vector2d r;
    if (!image_residual(s, T, problem.camera, &r)) {
      ++skipped;
      continue;
    }
    EigenbasisError e;
    e.z_major = s.cos_a * r.x() + s.sin_a * r.y();
    e.z_minor = -s.sin_a * r.x() + s.cos_a * r.y();
    e.t_major = s.t_major;
    e.t_minor = s.t_minor;
    errors.push_back(e);
  }
  if (excluded) *excluded = skipped;
  return errors;
}

double flow_nll(const Pose& x, const EgoProblem& problem, const LikelihoodModel& model,
                const ComponentMask* mask) {
  const NllContext ctx(problem, model);
  return nll_with_context(x, problem, ctx, mask);
}

namespace {

std::vector<double> pack_pose(const Pose& p) {
  return {p.position.x(), p.position.y(), p.position.z(),
          p.orientation.x(), p.orientation.y(), p.orientation.z()};
}

Pose unpack_pose(const std::vector<double>& v) {
  Pose p;
  p.position = {v[0], v[1], v[2]};
  p.orientation = {v[3], v[4], v[5]};
  return p;
}

MleResult mle_with_context(const EgoProblem& problem, const NllContext& ctx, const Pose& init,
                           const MleOptions& options, const ComponentMask* mask) {
  size_t vectors = 0;
  if (mask) {
    for (uint8_t b : *mask) vectors += b != 0;
  } else {
    vectors = problem.samples.size();
  }
  if (vectors < 3) throw std::invalid_argument("mle_pose: need at least 3 flow vectors");

  auto objective = [&](const std::vector<double>& v) {
    return nll_with_context(unpack_pose(v), problem, ctx, mask);
  };

  const std::vector<double> x0 = pack_pose(init);
  const double f_init = objective(x0);

  NelderMeadOptions nm;
  nm.max_evals = options.max_evals / 2;
  nm.steps = {options.position_step, options.position_step, options.position_step,
              options.angle_step, options.angle_step, options.angle_step};
  NelderMeadResult best = nelder_mead(objective, x0, nm);

  // one restart from a small perturbation of the first solution
  std::mt19937_64 rng(options.seed);
  std::vector<double> x1 = best.x;
  for (size_t d = 0; d < 6; ++d) x1[d] += 0.2 * nm.steps[d] * normal01(rng);
  const NelderMeadResult second = nelder_mead(objective, x1, nm);

  const NelderMeadResult& winner = second.fval < best.fval ? second : best;
  MleResult res;
  res.evals = best.evals + second.evals;
  if (winner.fval < f_init - 1e-12) {
    res.pose = unpack_pose(winner.x);
    res.nll = winner.fval;
    res.improved = true;
  } else {
    res.pose = init;
    res.nll = f_init;
    res.improved = false;
  }
  return res;
}

// distinct index triple from a per-iteration RNG stream
std::array<size_t, 3> sample_triple(std::mt19937_64& rng, size_t n) {
  std::array<size_t, 3> idx{};
  size_t filled = 0;
  while (filled < 3) {
    const size_t cand = static_cast<size_t>(uniform01(rng) * static_cast<double>(n));
    const size_t c = std::min(cand, n - 1);
    bool dup = false;
    for (size_t j = 0; j < filled; ++j) dup = dup || idx[j] == c;
    if (!dup) idx[filled++] = c;
  }
  return idx;
}

EgoProblem minimal_subproblem(const EgoProblem& problem, const std::array<size_t, 3>& idx) {
  EgoProblem sub;
  sub.prev_pose = problem.prev_pose;
  sub.camera = problem.camera;
  for (size_t i : idx) sub.samples.push_back(problem.samples[i]);
  return sub;
}

int adaptive_cap(double inlier_fraction, double confidence, int current_cap) {
  if (inlier_fraction <= 0.0) return current_cap;
  if (inlier_fraction >= 1.0) return 1;
  const double denom = std::log1p(-std::pow(inlier_fraction, 3));
  if (denom >= 0.0) return current_cap;
  const double needed = std::log1p(-confidence) / denom;
  if (needed >= static_cast<double>(current_cap)) return current_cap;
  return std::max(1, static_cast<int>(std::ceil(needed)));
}

}  // namespace

MleResult mle_pose(const EgoProblem& problem, const LikelihoodModel& model, const Pose& init,
                   const MleOptions& options, const ComponentMask* mask) {
  const NllContext ctx(problem, model);
  return mle_with_context(problem, ctx, init, options, mask);
}

SacResult ransac_egomotion(const EgoProblem& problem, const SacConfig& config,
                           const Pose& init) {
  const size_t n = problem.samples.size();
  SacResult res;
  res.pose = init;
  res.inliers.assign(n, 0);
  if (n < static_cast<size_t>(config.min_samples)) return res;

  const LikelihoodModel gauss = LikelihoodModel::gaussian_model(config.gaussian_sigma);
  const NllContext gauss_ctx(problem, gauss);

  auto count_inliers = [&](const Pose& x, ComponentMask* mask_out) {
    const Eigen::Isometry3d T = relative_transform(x, problem.prev_pose);
    size_t count = 0;
    for (size_t i = 0; i < n; ++i) {
      Eigen::Vector2d r;
      const bool in = image_residual(problem.samples[i], T, problem.camera, &r) &&
                      r.norm() < config.inlier_threshold;
      if (in) ++count;
      if (mask_out) (*mask_out)[i] = in ? 3 : 0;
    }
    return count;
  };

  Pose best_pose = init;
  size_t best_count = 0;
  int cap = config.max_iters;
  int iter = 0;
  for (; iter < cap; ++iter) {
    std::mt19937_64 rng(config.seed + static_cast<uint64_t>(iter));
    const auto idx = sample_triple(rng, n);
    const EgoProblem sub = minimal_subproblem(problem, idx);
    const NllContext sub_ctx(sub, gauss);
    const Pose hyp = mle_with_context(sub, sub_ctx, init, config.hypothesis_opt, nullptr).pose;
    const size_t count = count_inliers(hyp, nullptr);
    if (count > best_count) {
      best_count = count;
      best_pose = hyp;
      cap = adaptive_cap(static_cast<double>(count) / static_cast<double>(n), config.confidence,
                         cap);
    }
  }
  res.iterations = iter;
  res.consensus = best_count;
  res.inlier_ratio = static_cast<double>(best_count) / static_cast<double>(n);
  if (best_count < static_cast<size_t>(config.min_samples)) {
    res.pose = best_count > 0 ? best_pose : init;
    return res;
  }

  count_inliers(best_pose, &res.inliers);
  const MleResult refit =
      mle_with_context(problem, gauss_ctx, best_pose, config.refit_opt, &res.inliers);
  res.pose = refit.pose;
  res.ok = true;
  return res;
}

SacResult lcmsac_egomotion(const EgoProblem& problem, const ParamLut& lut,
                           const SacConfig& config, const Pose& init) {
  // dense mode drops low-texture samples before anything else
  EgoProblem working;
  working.prev_pose = problem.prev_pose;
  working.camera = problem.camera;
  std::vector<size_t> index_map;
  for (size_t i = 0; i < problem.samples.size(); ++i) {
    if (problem.samples[i].t_major < config.texture_cutoff) continue;
    working.samples.push_back(problem.samples[i]);
    index_map.push_back(i);
  }

  const size_t n = working.samples.size();
  SacResult res;
  res.pose = init;
  res.inliers.assign(problem.samples.size(), 0);
  if (n < static_cast<size_t>(config.min_samples)) return res;

  // The texture cutoff applies per measurement component: a low-texture minor
  // axis of an otherwise strong sample carries no usable flow information.
  // Confidence bounds for the active components are resolved once.
  const double level = config.inlier_threshold;
  std::vector<double> bound_major(n), bound_minor(n);
  std::vector<uint8_t> active(n, 0);
  for (size_t i = 0; i < n; ++i) {
    const EgoSample& s = working.samples[i];
    if (s.t_major >= config.texture_cutoff) {
      active[i] |= 1;
      bound_major[i] = lcm_confidence_halfwidth(lut_lookup(s.t_major, lut), level);
    }
    if (s.t_minor >= config.texture_cutoff) {
      active[i] |= 2;
      bound_minor[i] = lcm_confidence_halfwidth(lut_lookup(s.t_minor, lut), level);
    }
  }

  auto count_components = [&](const Pose& x, ComponentMask* mask_out) {
    const Eigen::Isometry3d T = relative_transform(x, working.prev_pose);
    size_t count = 0;
    for (size_t i = 0; i < n; ++i) {
      const EgoSample& s = working.samples[i];
      Eigen::Vector2d r;
      uint8_t bits = 0;
      if (image_residual(s, T, working.camera, &r)) {
        const double z1 = s.cos_a * r.x() + s.sin_a * r.y();
        const double z2 = -s.sin_a * r.x() + s.cos_a * r.y();
        if ((active[i] & 1) && std::abs(z1) < bound_major[i]) bits |= 1;
        if ((active[i] & 2) && std::abs(z2) < bound_minor[i]) bits |= 2;
      }
      count += !!(bits & 1) + !!(bits & 2);
      if (mask_out) (*mask_out)[i] = bits;
    }
    return count;
  };

  const LikelihoodModel gauss = LikelihoodModel::gaussian_model(config.gaussian_sigma);
  Pose best_pose = init;
  size_t best_count = 0;
  int cap = config.max_iters;
  int iter = 0;
  for (; iter < cap; ++iter) {
    std::mt19937_64 rng(config.seed + static_cast<uint64_t>(iter));
    const auto idx = sample_triple(rng, n);
    const EgoProblem sub = minimal_subproblem(working, idx);
    const NllContext sub_ctx(sub, gauss);
    const Pose hyp = mle_with_context(sub, sub_ctx, init, config.hypothesis_opt, nullptr).pose;
    const size_t count = count_components(hyp, nullptr);
    if (count > best_count) {
      best_count = count;
      best_pose = hyp;
      cap = adaptive_cap(static_cast<double>(count) / static_cast<double>(2 * n),
                         config.confidence, cap);
    }
  }
  res.iterations = iter;
  res.consensus = best_count;
  res.inlier_ratio = static_cast<double>(best_count) / static_cast<double>(2 * n);
  // 6 DoF need 6 component constraints
  if (best_count < 2 * static_cast<size_t>(config.min_samples)) {
    res.pose = best_count > 0 ? best_pose : init;
    return res;
  }

  ComponentMask working_mask(n, 0);
  count_components(best_pose, &working_mask);
  // smooth warm start before the sharp-cored mixture objective
  const NllContext gauss_ctx(working, gauss);
  MleOptions warm = config.refit_opt;
  warm.max_evals = config.refit_opt.max_evals / 2;
  const Pose warm_pose =
      mle_with_context(working, gauss_ctx, best_pose, warm, &working_mask).pose;
  const LikelihoodModel lcm = LikelihoodModel::lcm_model(lut);
  const NllContext lcm_ctx(working, lcm);
  MleOptions polish = config.refit_opt;
  polish.position_step = config.refit_opt.position_step * 0.2;
  polish.angle_step = config.refit_opt.angle_step * 0.2;
  const MleResult refit =
      mle_with_context(working, lcm_ctx, warm_pose, polish, &working_mask);
  res.pose = refit.pose;
  res.ok = true;
  for (size_t i = 0; i < n; ++i) res.inliers[index_map[i]] = working_mask[i];
  return res;
}

double drift_rate(const std::vector<Pose>& estimated, const std::vector<Pose>& truth) {
  if (estimated.size() != truth.size() || truth.size() < 2)
    throw std::invalid_argument("drift_rate: trajectories must have equal lengths >= 2");
  double path = 0.0;
  for (size_t k = 1; k < truth.size(); ++k)
    path += (truth[k].position - truth[k - 1].position).norm();
  if (!(path > 0.0)) throw std::invalid_argument("drift_rate: zero-length trajectory");
  const double err = (estimated.back().position - truth.back().position).norm();
  return 100.0 * err / path;
}

void save_trajectory_csv(const std::string& path, const std::vector<Pose>& poses) {
  std::ofstream out(path);
  if (!out) throw DataError("save_trajectory_csv: cannot open " + path + " for writing");
  out << "k,x,y,z,yaw,pitch,roll\n";
  char line[256];
  for (size_t k = 0; k < poses.size(); ++k) {
    const Pose& p = poses[k];
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", k,
                  p.position.x(), p.position.y(), p.position.z(), p.orientation.x(),
                  p.orientation.y(), p.orientation.z());
    out << line;
  }
  if (!out) throw DataError("save_trajectory_csv: write failed for " + path);
}

std::vector<Pose> load_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_trajectory_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("k,x,y,z,yaw,pitch,roll", 0) != 0)
    throw DataError("load_trajectory_csv: bad header in " + path);
  std::vector<Pose> poses;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != 7) throw DataError("load_trajectory_csv: bad row in " + path);
    Pose p;
    p.position = {vals[1], vals[2], vals[3]};
    p.orientation = {vals[4], vals[5], vals[6]};
    poses.push_back(p);
  }
  return poses;
}

OdometryStats run_odometry(const std::vector<Pose>& truth, const CameraModel& camera,
                           const std::function<OdometryFrame(int)>& frames, Estimator estimator,
                           const SacConfig& config, const ParamLut* lut, size_t max_samples) {
  if (truth.size() < 2) throw std::invalid_argument("run_odometry: need at least 2 poses");
  if (estimator == Estimator::lcmsac && !lut)
    throw std::invalid_argument("run_odometry: LCMSAC requires a parameter table");

  OdometryStats stats;
  stats.estimated.push_back(truth.front());
  Eigen::Isometry3d last_step = Eigen::Isometry3d::Identity();

  for (size_t k = 1; k < truth.size(); ++k) {
    const OdometryFrame frame = frames(static_cast<int>(k - 1));
    const Pose& prev = stats.estimated.back();
    const EgoProblem problem =
        EgoProblem::assemble(prev, frame.flow, frame.structure, frame.depth, camera, max_samples);

    // constant-velocity seed
    const Eigen::Isometry3d T_init = prev.transform() * last_step;
    Pose init;
    init.position = T_init.translation();
    init.orientation = Pose::euler_from_rotation(T_init.linear());

    SacResult result;
    if (estimator == Estimator::ransac)
      result = ransac_egomotion(problem, config, init);
    else
      result = lcmsac_egomotion(problem, *lut, config, init);

    const Pose est = result.ok ? result.pose : init;
    if (!result.ok) ++stats.failures;
    last_step = prev.transform().inverse() * est.transform();
    stats.estimated.push_back(est);
    stats.frame_error_m.push_back((est.position - truth[k].position).norm());
    stats.inlier_ratio.push_back(result.inlier_ratio);
  }

  stats.drift_percent = drift_rate(stats.estimated, truth);
  for (size_t k = 1; k < truth.size(); ++k)
    stats.path_length_m += (truth[k].position - truth[k - 1].position).norm();
  stats.final_error_m = (stats.estimated.back().position - truth.back().position).norm();
  return stats;
}

}  // namespace lcmflow
