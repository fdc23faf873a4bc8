#include "lcmflow/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace lcmflow {

namespace {

double laplace_rate(double beta) { return std::tan(0.5 * M_PI * beta); }

double logit(double p) {
  p = std::clamp(p, 1e-9, 1.0 - 1e-9);
  return std::log(p / (1.0 - p));
}

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// log(a + b) from log a, log b; either may be -inf
double log_add(double la, double lb) {
  if (la == -std::numeric_limits<double>::infinity()) return lb;
  if (lb == -std::numeric_limits<double>::infinity()) return la;
  const double m = std::max(la, lb);
  return m + std::log1p(std::exp(std::min(la, lb) - m));
}

}  // namespace

void LcmParams::validate() const {
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("LcmParams: beta must be in (0,1)");
  if (!(gamma > 0.0) || !std::isfinite(gamma))
    throw std::invalid_argument("LcmParams: gamma must be positive and finite");
  if (!(w_l >= 0.0 && w_l <= 1.0)) throw std::invalid_argument("LcmParams: w_l must be in [0,1]");
}

double lcm_pdf(double x, const LcmParams& p) {
  p.validate();
  const double rate = laplace_rate(p.beta);
  const double laplace = 0.5 * rate * std::exp(-std::abs(x) * rate);
  const double cauchy = p.gamma / (M_PI * (p.gamma * p.gamma + x * x));
  return p.w_l * laplace + (1.0 - p.w_l) * cauchy;
}

LcmLogPdfTerms::LcmLogPdfTerms(const LcmParams& p) {
  const double inf = std::numeric_limits<double>::infinity();
  rate = laplace_rate(p.beta);
  log_laplace = p.w_l > 0.0 ? std::log(0.5 * p.w_l * rate) : -inf;
  log_cauchy = p.w_l < 1.0 ? std::log((1.0 - p.w_l) * p.gamma / M_PI) : -inf;
  gamma_sq = p.gamma * p.gamma;
}

double LcmLogPdfTerms::operator()(double x) const {
  const double ll = log_laplace - std::abs(x) * rate;
  const double lc = log_cauchy - std::log(gamma_sq + x * x);
  return log_add(ll, lc);
}

double lcm_log_pdf(double x, const LcmParams& p) { return LcmLogPdfTerms(p)(x); }

double lcm_cdf(double x, const LcmParams& p) {
  p.validate();
  const double rate = laplace_rate(p.beta);
  const double laplace = x < 0.0 ? 0.5 * std::exp(rate * x) : 1.0 - 0.5 * std::exp(-rate * x);
  const double cauchy = 0.5 + std::atan(x / p.gamma) / M_PI;
  return p.w_l * laplace + (1.0 - p.w_l) * cauchy;
}

double lcm_confidence_halfwidth(const LcmParams& p, double level) {
  p.validate();
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("lcm_confidence_halfwidth: level must be in (0,1)");
  const double target = 0.5 * (1.0 + level);  // F(c) by symmetry
  double lo = 0.0, hi = 1.0;
  while (lcm_cdf(hi, p) < target) {
    hi *= 2.0;
    if (hi > 1e300) throw NumericalError("lcm_confidence_halfwidth: bracket failed");
  }
  while (hi - lo > 1e-10 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (lcm_cdf(mid, p) < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

void ParamLut::validate() const {
  if (knots.empty()) throw std::invalid_argument("ParamLut: at least one knot required");
  if (knots.size() != entries.size())
    throw std::invalid_argument("ParamLut: knots and entries must have equal length");
  for (size_t i = 0; i < knots.size(); ++i) {
    if (!(knots[i] > 0.0)) throw std::invalid_argument("ParamLut: knots must be positive");
    if (i > 0 && !(knots[i] > knots[i - 1]))
      throw std::invalid_argument("ParamLut: knots must be strictly increasing");
    entries[i].validate();
  }
}

namespace {

// Interpolation locus of texture t: segment index and weight in log10 space.
struct LutLocus {
  size_t index = 0;
  double weight = 0.0;  // 0 -> entry[index], 1 -> entry[index+1]
};

LutLocus lut_locate(double t, const std::vector<double>& knots) {
  const double lt = std::log10(std::max(t, kTextureFloor));
  const size_t m = knots.size();
  if (m == 1 || lt <= std::log10(knots.front())) return {0, 0.0};
  if (lt >= std::log10(knots.back())) return {m - 2, 1.0};
  size_t lo = 0, hi = m - 1;
  while (hi - lo > 1) {
    const size_t mid = (lo + hi) / 2;
    if (std::log10(knots[mid]) <= lt)
      lo = mid;
    else
      hi = mid;
  }
  const double l0 = std::log10(knots[lo]), l1 = std::log10(knots[lo + 1]);
  return {lo, (lt - l0) / (l1 - l0)};
}

LcmParams lut_interp(const LutLocus& locus, const std::vector<LcmParams>& entries) {
  if (locus.weight == 0.0) return entries[locus.index];
  if (locus.weight == 1.0) return entries[locus.index + 1];
  const LcmParams& a = entries[locus.index];
  const LcmParams& b = entries[locus.index + 1];
  const double w = locus.weight;
  return {a.beta + (b.beta - a.beta) * w, a.gamma + (b.gamma - a.gamma) * w,
          a.w_l + (b.w_l - a.w_l) * w};
}

}  // namespace

LcmParams lut_lookup(double t, const ParamLut& lut) {
  if (!(t >= 0.0)) throw std::invalid_argument("lut_lookup: texture must be >= 0");
  return lut_interp(lut_locate(t, lut.knots), lut.entries);
}

std::vector<double> lut_bin_edges(const std::vector<double>& knots) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> edges;
  edges.push_back(-inf);
  for (size_t i = 0; i + 1 < knots.size(); ++i)
    edges.push_back(0.5 * (std::log10(knots[i]) + std::log10(knots[i + 1])));
  edges.push_back(inf);
  return edges;
}

void ParamLut::save_json(const std::string& path) const {
  validate();
  nlohmann::json doc;
  doc["knots"] = knots;
  doc["entries"] = nlohmann::json::array();
  for (const LcmParams& e : entries)
    doc["entries"].push_back({{"beta", e.beta}, {"gamma", e.gamma}, {"w_l", e.w_l}});
  doc["texture_units"] = "intensity2_per_pixel2";
  std::ofstream out(path);
  if (!out) throw DataError("ParamLut::save_json: cannot open " + path + " for writing");
  out << doc.dump(2) << "\n";
}

ParamLut ParamLut::load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("ParamLut::load_json: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("ParamLut::load_json: parse error in " + path + ": " + e.what());
  }
  ParamLut lut;
  try {
    lut.knots = doc.at("knots").get<std::vector<double>>();
    for (const auto& e : doc.at("entries"))
      lut.entries.push_back(
          {e.at("beta").get<double>(), e.at("gamma").get<double>(), e.at("w_l").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw DataError("ParamLut::load_json: missing field in " + path + ": " + e.what());
  }
  try {
    lut.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError("ParamLut::load_json: invalid table in " + path + ": " + e.what());
  }
  return lut;
}

double nll_cost(const ParamLut& lut, const TrainingSet& data) {
  lut.validate();
  if (data.size() == 0) throw std::invalid_argument("nll_cost: empty training set");
  const double total = deterministic_sum(data.size(), [&](size_t i) {
    return -lcm_log_pdf(data.z[i], lut_interp(lut_locate(data.t[i], lut.knots), lut.entries));
  });
  return total / static_cast<double>(data.size());
}

namespace {

LcmParams params_from_unconstrained(const double* u) {
  return {sigmoid(u[0]), std::exp(std::clamp(u[1], -60.0, 60.0)), sigmoid(u[2])};
}

void params_to_unconstrained(const LcmParams& p, double* u) {
  u[0] = logit(p.beta);
  u[1] = std::log(std::max(p.gamma, 1e-12));
  u[2] = logit(p.w_l);
}

double percentile(std::vector<double>& sorted_values, double q) {
  if (sorted_values.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted_values.size() - 1);
  const size_t i = static_cast<size_t>(pos);
  const size_t j = std::min(i + 1, sorted_values.size() - 1);
  const double frac = pos - static_cast<double>(i);
  return sorted_values[i] + frac * (sorted_values[j] - sorted_values[i]);
}

LcmParams robust_init(const std::vector<double>& bin_z) {
  std::vector<double> mags(bin_z.size());
  for (size_t i = 0; i < bin_z.size(); ++i) mags[i] = std::abs(bin_z[i]);
  std::sort(mags.begin(), mags.end());
  const double med = percentile(mags, 0.5);
  const double p95 = percentile(mags, 0.95);
  // Laplace median is ln2/rate; Cauchy 95th magnitude percentile is
  // gamma * tan(0.45 pi).
  const double rate = std::log(2.0) / std::max(med, 1e-9);
  LcmParams init;
  init.beta = std::clamp(2.0 / M_PI * std::atan(rate), 0.02, 0.98);
  init.gamma = std::clamp(p95 / std::tan(0.45 * M_PI), 1e-9, 1e9);
  init.w_l = 0.8;
  return init;
}

}  // namespace

ParamLut fit_lut(const TrainingSet& data, const std::vector<double>& knots,
                 const FitOptions& options, FitReport* report) {
  if (data.size() == 0) throw std::invalid_argument("fit_lut: empty training set");
  {
    ParamLut probe;
    probe.knots = knots;
    probe.entries.assign(knots.size(), LcmParams{});
    probe.validate();
  }

  // nearest-knot binning in log-texture space
  const std::vector<double> edges = lut_bin_edges(knots);
  const size_t m = knots.size();
  std::vector<std::vector<double>> bin_z(m);
  std::vector<std::vector<double>> bin_t(m);
  for (size_t i = 0; i < data.size(); ++i) {
    const double lt = std::log10(std::max(data.t[i], kTextureFloor));
    const size_t bin =
        static_cast<size_t>(std::upper_bound(edges.begin() + 1, edges.end() - 1, lt) -
                            (edges.begin() + 1));
    bin_z[bin].push_back(data.z[i]);
    bin_t[bin].push_back(data.t[i]);
  }

  std::vector<size_t> counts(m);
  std::vector<double> kept_knots, dropped;
  std::vector<size_t> kept_index;
  for (size_t k = 0; k < m; ++k) {
    counts[k] = bin_z[k].size();
    if (counts[k] >= static_cast<size_t>(options.min_bin_count)) {
      kept_knots.push_back(knots[k]);
      kept_index.push_back(k);
    } else {
      dropped.push_back(knots[k]);
    }
  }
  if (kept_knots.empty()) {
    std::string msg = "fit_lut: every knot bin is starved (counts:";
    for (size_t k = 0; k < m; ++k) msg += " " + std::to_string(counts[k]);
    throw DataError(msg + "); need >= " + std::to_string(options.min_bin_count) + " per knot");
  }

  // per-bin subsampling by fixed stride keeps the fit cheap and deterministic
  auto subsample = [&options](const std::vector<double>& v) {
    if (options.max_fit_samples_per_bin == 0 || v.size() <= options.max_fit_samples_per_bin)
      return v;
    const size_t stride = (v.size() + options.max_fit_samples_per_bin - 1) /
                          options.max_fit_samples_per_bin;
    std::vector<double> out;
    out.reserve(v.size() / stride + 1);
    for (size_t i = 0; i < v.size(); i += stride) out.push_back(v[i]);
    return out;
  };

  const size_t mk = kept_knots.size();
  std::vector<std::vector<double>> fit_z(mk), fit_t(mk);
  std::vector<LcmParams> init_entries(mk);
  for (size_t k = 0; k < mk; ++k) {
    fit_z[k] = subsample(bin_z[kept_index[k]]);
    fit_t[k] = subsample(bin_t[kept_index[k]]);
    init_entries[k] = robust_init(bin_z[kept_index[k]]);
  }

  // Stage A: independent per-knot fits on each bin.
  std::vector<LcmParams> stage_a(mk);
  for (size_t k = 0; k < mk; ++k) {
    const std::vector<double>& zs = fit_z[k];
    auto objective = [&zs](const std::vector<double>& u) {
      const LcmLogPdfTerms terms(params_from_unconstrained(u.data()));
      double s = 0.0;
      for (double z : zs) s -= terms(z);
      return s / static_cast<double>(zs.size());
    };
    std::vector<double> u0(3);
    params_to_unconstrained(init_entries[k], u0.data());
    NelderMeadOptions nm;
    nm.max_evals = options.per_knot_evals;
    nm.steps = {0.5, 0.5, 0.5};
    const NelderMeadResult res = nelder_mead(objective, u0, nm);
    stage_a[k] = params_from_unconstrained(res.x.data());
  }

  // Stage B: joint polish over all kept knots with the interpolated cost.
  std::vector<double> pooled_z;
  std::vector<LutLocus> pooled_locus;
  for (size_t k = 0; k < mk; ++k)
    for (size_t i = 0; i < fit_z[k].size(); ++i) {
      pooled_z.push_back(fit_z[k][i]);
      pooled_locus.push_back(lut_locate(fit_t[k][i], kept_knots));
    }

  std::vector<LcmParams> joint_entries(mk);
  auto joint_objective = [&](const std::vector<double>& u) {
    for (size_t k = 0; k < mk; ++k) joint_entries[k] = params_from_unconstrained(u.data() + 3 * k);
    const double total = deterministic_sum(pooled_z.size(), [&](size_t i) {
      return -lcm_log_pdf(pooled_z[i], lut_interp(pooled_locus[i], joint_entries));
    });
    return total / static_cast<double>(pooled_z.size());
  };

  std::vector<double> base_u(3 * mk);
  for (size_t k = 0; k < mk; ++k) params_to_unconstrained(stage_a[k], base_u.data() + 3 * k);

  std::mt19937_64 rng(options.seed);
  std::vector<double> best_u = base_u;
  double best_f = joint_objective(base_u);
  NelderMeadOptions nm;
  nm.max_evals = options.joint_evals_per_dim * static_cast<int>(3 * mk);
  nm.steps.assign(3 * mk, 0.25);
  for (int r = 0; r < std::max(options.restarts, 1); ++r) {
    std::vector<double> u0 = base_u;
    if (r > 0)
      for (double& v : u0) v += 0.3 * normal01(rng);
    const NelderMeadResult res = nelder_mead(joint_objective, u0, nm);
    if (res.fval < best_f) {
      best_f = res.fval;
      best_u = res.x;
    }
  }

  auto assemble = [&kept_knots, mk](const std::vector<LcmParams>& entries) {
    ParamLut lut;
    lut.knots = kept_knots;
    lut.entries = entries;
    (void)mk;
    return lut;
  };
  std::vector<LcmParams> stage_b(mk);
  for (size_t k = 0; k < mk; ++k) stage_b[k] = params_from_unconstrained(best_u.data() + 3 * k);

  // The fit must never report a table worse than its initialization on the
  // complete data, regardless of subsampling.
  const ParamLut lut_init = assemble(init_entries);
  const ParamLut lut_a = assemble(stage_a);
  const ParamLut lut_b = assemble(stage_b);
  const double j_init = nll_cost(lut_init, data);
  const double j_a = nll_cost(lut_a, data);
  const double j_b = nll_cost(lut_b, data);

  const ParamLut* best = &lut_init;
  double j_final = j_init;
  if (j_a < j_final) {
    best = &lut_a;
    j_final = j_a;
  }
  if (j_b < j_final) {
    best = &lut_b;
    j_final = j_b;
  }

  if (report) {
    report->j_init = j_init;
    report->j_final = j_final;
    report->bin_counts = counts;
    report->dropped_knots = dropped;
  }
  return *best;
}

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, std::max(f - static_cast<double>(i) / n,
                             static_cast<double>(i + 1) / n - f));
  }
  return d;
}

GaussianFit fit_gaussian_zero_mean(const std::vector<double>& z) {
  if (z.empty()) throw std::invalid_argument("fit_gaussian_zero_mean: empty bin");
  double ss = 0.0;
  for (double v : z) ss += v * v;
  GaussianFit fit;
  fit.sigma = std::sqrt(ss / static_cast<double>(z.size()));
  fit.degenerate = fit.sigma == 0.0;
  return fit;
}

double gaussian_cdf(double x, double sigma) {
  return 0.5 * std::erfc(-x / (sigma * std::sqrt(2.0)));
}

LogLogisticFit fit_log_logistic_magnitude(const std::vector<double>& z, int max_evals) {
  if (z.empty()) throw std::invalid_argument("fit_log_logistic_magnitude: empty bin");
  std::vector<double> mags(z.size());
  bool all_zero = true;
  for (size_t i = 0; i < z.size(); ++i) {
    mags[i] = std::max(std::abs(z[i]), 1e-12);
    all_zero = all_zero && z[i] == 0.0;
  }
  LogLogisticFit fit;
  if (all_zero) {
    fit.degenerate = true;
    return fit;
  }
  std::vector<double> sorted = mags;
  std::sort(sorted.begin(), sorted.end());
  const double med = percentile(sorted, 0.5);
  const double q25 = percentile(sorted, 0.25);
  const double q75 = percentile(sorted, 0.75);
  double shape0 = 1.0;
  if (q75 > q25 && q25 > 0.0) shape0 = std::log(9.0) / std::log(q75 / q25);
  shape0 = std::clamp(shape0, 0.05, 50.0);

  auto objective = [&mags](const std::vector<double>& u) {
    const double a = std::exp(std::clamp(u[0], -60.0, 60.0));
    const double b = std::exp(std::clamp(u[1], -6.0, 6.0));
    double nll = 0.0;
    for (double x : mags) {
      const double lr = b * (std::log(x) - std::log(a));
      nll -= std::log(b) - std::log(x) + lr - 2.0 * log_add(0.0, lr);
    }
    return nll / static_cast<double>(mags.size());
  };
  NelderMeadOptions nm;
  nm.max_evals = max_evals;
  nm.steps = {0.5, 0.3};
  const NelderMeadResult res =
      nelder_mead(objective, {std::log(std::max(med, 1e-12)), std::log(shape0)}, nm);
  fit.scale = std::exp(res.x[0]);
  fit.shape = std::exp(std::clamp(res.x[1], -6.0, 6.0));
  return fit;
}

double log_logistic_cdf(double x, const LogLogisticFit& fit) {
  if (x <= 0.0) return 0.0;
  return 1.0 / (1.0 + std::pow(x / fit.scale, -fit.shape));
}

}  // namespace lcmflow
