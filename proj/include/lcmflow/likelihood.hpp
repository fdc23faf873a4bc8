#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lcmflow/core.hpp"

namespace lcmflow {

// Laplace-Cauchy mixture parameters. beta in (0,1) sets the Laplace rate
// tan(pi/2 * beta), gamma > 0 scales the Cauchy component, w_l in [0,1]
// weighs the Laplace component.
struct LcmParams {
  double beta = 0.5;
  double gamma = 1.0;
  double w_l = 0.5;

  void validate() const;
};

double lcm_pdf(double x, const LcmParams& p);
double lcm_log_pdf(double x, const LcmParams& p);
double lcm_cdf(double x, const LcmParams& p);

// Per-parameter constants of the log-density, hoisted out of sample loops.
struct LcmLogPdfTerms {
  double rate = 0.0;        // tan(pi/2 * beta)
  double log_laplace = 0.0; // log(w_l * rate / 2), -inf when w_l = 0
  double log_cauchy = 0.0;  // log((1 - w_l) * gamma / pi), -inf when w_l = 1
  double gamma_sq = 0.0;

  explicit LcmLogPdfTerms(const LcmParams& p);
  LcmLogPdfTerms() = default;
  double operator()(double x) const;
};

// Smallest c >= 0 with F(c) - F(-c) = level, via bisection to 1e-10 relative.
double lcm_confidence_halfwidth(const LcmParams& p, double level);

// Texture floor guarding log10 of zero texture (flat patches in dense mode).
inline constexpr double kTextureFloor = 1e-3;

// Texture-indexed parameter table, interpolated component-wise against
// log10(texture) and clamped to the end entries outside the knot range.
struct ParamLut {
  std::vector<double> knots;  // texture values, strictly increasing, > 0
  std::vector<LcmParams> entries;

  void validate() const;
  void save_json(const std::string& path) const;
  static ParamLut load_json(const std::string& path);
};

LcmParams lut_lookup(double t, const ParamLut& lut);

// Bin edges aligned to knot midpoints in log-texture space: bin i collects
// the samples nearest to knot i. Size is knots.size() + 1; ends are +-inf.
std::vector<double> lut_bin_edges(const std::vector<double>& knots);

// Flattened calibration data: eigenbasis flow-error components paired with
// the matching texture eigenvalue.
struct TrainingSet {
  std::vector<double> z;  // error components, pixels/frame
  std::vector<double> t;  // texture, intensity^2/pixel^2

  size_t size() const { return z.size(); }
  void push(double zi, double ti) {
    z.push_back(zi);
    t.push_back(ti);
  }
};

// Mean negative log LCM density under LUT-interpolated parameters.
double nll_cost(const ParamLut& lut, const TrainingSet& data);

struct FitOptions {
  int restarts = 5;            // random restarts around the stage-A solution
  int per_knot_evals = 500;    // Nelder-Mead budget per knot (stage A)
  int joint_evals_per_dim = 150;  // joint polish budget, scaled by 3M
  int min_bin_count = 100;     // starved-knot threshold
  size_t max_fit_samples_per_bin = 0;  // 0 = use everything
  uint64_t seed = 1;
};

struct FitReport {
  double j_init = 0.0;
  double j_final = 0.0;
  std::vector<size_t> bin_counts;      // per input knot
  std::vector<double> dropped_knots;   // starved knots removed from the fit
};

// Minimizes the calibration cost over an unconstrained reparametrization
// (logit beta, log gamma, logit w_l) with Nelder-Mead: a per-knot fit from
// robust bin statistics, then a joint polish with random restarts. Knots
// whose bin holds fewer than min_bin_count samples are dropped and reported;
// throws DataError when no knot survives.
ParamLut fit_lut(const TrainingSet& data, const std::vector<double>& knots,
                 const FitOptions& options = {}, FitReport* report = nullptr);

// One-sample Kolmogorov-Smirnov statistic with both-sided step evaluation.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);

// Zero-mean Gaussian fitted by moments; degenerate when all samples are zero.
struct GaussianFit {
  double sigma = 0.0;
  bool degenerate = false;
};
GaussianFit fit_gaussian_zero_mean(const std::vector<double>& z);
double gaussian_cdf(double x, double sigma);

// Log-logistic fitted to magnitudes |z| by maximum likelihood.
struct LogLogisticFit {
  double scale = 1.0;
  double shape = 1.0;
  bool degenerate = false;
};
LogLogisticFit fit_log_logistic_magnitude(const std::vector<double>& z, int max_evals = 600);
double log_logistic_cdf(double x, const LogLogisticFit& fit);

}  // namespace lcmflow
