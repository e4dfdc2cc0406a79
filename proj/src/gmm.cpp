#include <cmath>
#include <limits>
#include <numbers>

#include "imotion/error.hpp"
#include "imotion/generator.hpp"

namespace imotion {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

// log N(x | mean_k, diag var_k) + log w_k for every component and sample (K x N),
// expanding the quadratic form so the work is two matrix products.
Eigen::MatrixXd weighted_log_density(const GaussianMixture& g, const Eigen::MatrixXd& x) {
  const Eigen::Index D = x.rows();
  const Eigen::MatrixXd inv = g.variances.cwiseInverse();
  const Eigen::MatrixXd scaled_means = g.means.cwiseProduct(inv);
  Eigen::VectorXd offset(g.weights.size());
  for (Eigen::Index k = 0; k < offset.size(); ++k) {
    const double lw = g.weights[k] > 0.0 ? std::log(g.weights[k]) : -std::numeric_limits<double>::infinity();
    offset[k] = lw - 0.5 * (static_cast<double>(D) * kLog2Pi + g.variances.col(k).array().log().sum() +
                            g.means.col(k).dot(scaled_means.col(k)));
  }
  Eigen::MatrixXd out = scaled_means.transpose() * x;
  out.noalias() -= 0.5 * inv.transpose() * x.cwiseAbs2();
  out.colwise() += offset;
  return out;
}

// Column-wise log-sum-exp; also turns `lp` into responsibilities when asked.
Eigen::VectorXd log_sum_exp(Eigen::MatrixXd& lp, bool normalize) {
  const Eigen::RowVectorXd m = lp.colwise().maxCoeff();
  Eigen::ArrayXXd d = lp.rowwise() - m;
  // Flush would-be subnormals; they make the M-step products crawl.
  d = (d < -700.0).select(0.0, d.exp());
  const Eigen::RowVectorXd s = d.colwise().sum().matrix();
  if (normalize) lp = (d.rowwise() / s.array()).matrix();
  return (m.array() + s.array().log()).matrix().transpose();
}

}  // namespace

double GaussianMixture::mean_log_likelihood(const Eigen::MatrixXd& samples) const {
  Eigen::MatrixXd lp = weighted_log_density(*this, samples);
  return log_sum_exp(lp, false).mean();
}

std::size_t GaussianMixture::sample_component(Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return static_cast<std::size_t>(k);
  }
  // Round-off: fall back to the last component with positive weight.
  for (Eigen::Index k = weights.size(); k-- > 0;) {
    if (weights[k] > 0.0) return static_cast<std::size_t>(k);
  }
  return 0;
}

Eigen::VectorXd GaussianMixture::sample(Rng& rng) const {
  const auto k = static_cast<Eigen::Index>(sample_component(rng));
  Eigen::VectorXd out(means.rows());
  for (Eigen::Index d = 0; d < out.size(); ++d) {
    out[d] = means(d, k) + std::sqrt(variances(d, k)) * rng.normal();
  }
  return out;
}

GaussianMixture em_fit(const Eigen::MatrixXd& x, int k, const GmmOptions& opts, Rng& rng,
                       std::vector<double>* trace) {
  const Eigen::Index N = x.cols(), D = x.rows();
  if (k < 1 || N < k) throw InsufficientData(std::to_string(N) + " samples for " + std::to_string(k) + " components");

  GaussianMixture g;
  g.weights = Eigen::VectorXd::Constant(k, 1.0 / k);
  g.means.resize(D, k);
  const auto picks = rng.sample_without_replacement(static_cast<std::size_t>(N), static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) g.means.col(c) = x.col(static_cast<Eigen::Index>(picks[static_cast<std::size_t>(c)]));
  const Eigen::VectorXd mu = x.rowwise().mean();
  const Eigen::VectorXd pooled =
      ((x.colwise() - mu).array().square().rowwise().sum() / static_cast<double>(N)).max(opts.variance_floor);
  g.variances = pooled.replicate(1, k);

  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < opts.max_iterations; ++it) {
    Eigen::MatrixXd resp = weighted_log_density(g, x);
    const double ll = log_sum_exp(resp, true).mean();
    if (trace) trace->push_back(ll);
    if (ll - prev < opts.tolerance) break;
    prev = ll;

    const Eigen::VectorXd nk = resp.rowwise().sum();
    const Eigen::MatrixXd sx = x * resp.transpose();               // D x K
    const Eigen::MatrixXd sxx = x.cwiseAbs2() * resp.transpose();  // D x K
    for (int c = 0; c < k; ++c) {
      g.weights[c] = nk[c] / static_cast<double>(N);
      if (nk[c] <= 1e-300) continue;  // empty component: parameters are irrelevant
      const Eigen::VectorXd m = sx.col(c) / nk[c];
      g.means.col(c) = m;
      g.variances.col(c) = (sxx.col(c) / nk[c] - m.cwiseAbs2()).cwiseMax(opts.variance_floor);
    }
    g.weights /= g.weights.sum();
  }
  return g;
}

double collapse_threshold(const Eigen::MatrixXd& samples, double ratio) {
  return ratio * samples.colwise().norm().mean();
}

bool detect_collapse(const GaussianMixture& gmm, const Eigen::MatrixXd& refs, double threshold) {
  for (Eigen::Index k = 0; k < gmm.means.cols(); ++k) {
    for (Eigen::Index r = 0; r < refs.cols(); ++r) {
      if ((gmm.means.col(k) - refs.col(r)).norm() < threshold) return true;
    }
  }
  return false;
}

GaussianMixture fit_gmm(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& refs, const GmmOptions& opts,
                        Rng& rng, GmmFitReport* report) {
  if (samples.cols() == 0) throw InsufficientData("no samples to fit");
  if (opts.k_init < 1) throw InvalidArgument("k_init must be at least 1");
  const Eigen::VectorXd first = samples.col(0);
  const bool identical = ((samples.colwise() - first).array().abs() == 0.0).all();
  if (identical && opts.k_init > 1) {
    throw DegenerateData("all samples are identical; no mixture with more than one component exists");
  }
  const double threshold = collapse_threshold(samples, opts.collapse_threshold_ratio);
  GmmFitReport local;
  GmmFitReport& rep = report ? *report : local;
  rep = {};

  int k = std::min<int>(opts.k_init, static_cast<int>(samples.cols()));
  for (; k >= 1; --k) {
    const int tries = k == 1 ? 1 : std::max(opts.max_retries, 1);
    for (int attempt = 0; attempt < tries; ++attempt) {
      std::vector<double> trace;
      GaussianMixture g = em_fit(samples, k, opts, rng, &trace);
      ++rep.attempts;
      const bool collapsed = detect_collapse(g, refs, threshold);
      if (!collapsed || k == 1) {
        rep.components = k;
        rep.accepted_collapsed = collapsed;
        rep.log_likelihood_trace = std::move(trace);
        return g;
      }
    }
  }
  throw DegenerateData("no mixture could be fitted");  // unreachable: k == 1 always returns
}

}  // namespace imotion
