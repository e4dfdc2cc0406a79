#include <Eigen/Eigenvalues>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <map>

#include "imotion/error.hpp"
#include "imotion/metrics.hpp"

namespace imotion {

namespace {

constexpr double kCovJitter = 1e-10;

// Symmetric PSD square root with eigenvalues clamped at zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

bool rank_deficient(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
  const double top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
  return es.eigenvalues().minCoeff() <= 1e-12 * top;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& rows, const Eigen::VectorXd& mu) {
  const Eigen::MatrixXd c = rows.rowwise() - mu.transpose();
  return (c.transpose() * c) / static_cast<double>(rows.rows() - 1);
}

double paired_distance(const Eigen::MatrixXd& f, int subset, Rng& rng) {
  const auto n = static_cast<std::size_t>(f.rows());
  const auto s = static_cast<std::size_t>(subset);
  std::vector<std::size_t> a, b;
  if (n >= s) {
    a = rng.sample_without_replacement(n, s);
    b = rng.sample_without_replacement(n, s);
  } else {
    for (std::size_t i = 0; i < s; ++i) a.push_back(rng.uniform_index(n));
    for (std::size_t i = 0; i < s; ++i) b.push_back(rng.uniform_index(n));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    total += (f.row(static_cast<Eigen::Index>(a[i])) - f.row(static_cast<Eigen::Index>(b[i]))).norm();
  }
  return total / static_cast<double>(s);
}

}  // namespace

MotionSequence adjust_length(const MotionSequence& seq, int target_len, Rng& rng) {
  if (target_len < 1) throw InvalidArgument("target length must be at least 1");
  if (seq.poses.empty()) throw InvalidArgument("cannot adjust an empty sequence");
  MotionSequence out{seq.id, seq.action, {}};
  const auto T = seq.length();
  const auto L = static_cast<std::size_t>(target_len);
  if (T <= L) {
    out.poses = seq.poses;
    out.poses.resize(L, seq.poses.back());
  } else {
    const std::size_t start = rng.uniform_index(T - L + 1);
    out.poses.assign(seq.poses.begin() + static_cast<std::ptrdiff_t>(start),
                     seq.poses.begin() + static_cast<std::ptrdiff_t>(start + L));
  }
  return out;
}

Eigen::MatrixXd extract_features(std::span<const MotionSequence> seqs, const FeatureExtractor& fx, int target_len,
                                 Rng& rng) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(seqs.size()), static_cast<Eigen::Index>(fx.hidden_dim()));
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = fx.features(adjust_length(seqs[i], target_len, rng)).transpose();
  }
  return out;
}

FidResult fid_from_moments(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& sigma_a, const Eigen::VectorXd& mu_b,
                           const Eigen::MatrixXd& sigma_b) {
  const Eigen::Index d = mu_a.size();
  if (mu_b.size() != d || sigma_a.rows() != d || sigma_a.cols() != d || sigma_b.rows() != d ||
      sigma_b.cols() != d) {
    throw DimensionMismatch("feature moments differ in dimension");
  }
  FidResult r;
  Eigen::MatrixXd sa = sigma_a, sb = sigma_b;
  if (rank_deficient(sa) || rank_deficient(sb)) {
    r.degenerate_covariance = true;
    sa.diagonal().array() += kCovJitter;
    sb.diagonal().array() += kCovJitter;
  }
  const Eigen::MatrixXd ra = psd_sqrt(sa);
  Eigen::MatrixXd m = ra * sb * ra;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  r.value = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return r;
}

FidResult fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() < 2 || b.rows() < 2) throw InsufficientData("FID needs at least 2 rows per set");
  if (a.cols() != b.cols()) throw DimensionMismatch("feature sets differ in dimension");
  const Eigen::VectorXd mu_a = a.colwise().mean().transpose(), mu_b = b.colwise().mean().transpose();
  return fid_from_moments(mu_a, covariance(a, mu_a), mu_b, covariance(b, mu_b));
}

double diversity(const Eigen::MatrixXd& features, int subset, Rng& rng) {
  if (features.rows() < 2) throw InsufficientData("diversity needs at least 2 features");
  if (subset < 1) throw InvalidArgument("subset size must be positive");
  return paired_distance(features, subset, rng);
}

double multimodality(const Eigen::MatrixXd& features, std::span<const int> labels, int subset, Rng& rng) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ShapeMismatch("one label per feature row");
  if (labels.empty()) throw InsufficientData("no features");
  if (subset < 1) throw InvalidArgument("subset size must be positive");
  std::map<int, std::vector<Eigen::Index>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<Eigen::Index>(i));
  double total = 0.0;
  for (const auto& [label, rows] : groups) {
    total += paired_distance(features(rows, Eigen::all), subset, rng);
  }
  return total / static_cast<double>(groups.size());
}

double accuracy(std::span<const MotionSequence> seqs, std::span<const int> labels, const FeatureExtractor& fx,
                int target_len, Rng& rng) {
  if (seqs.size() != labels.size()) throw ShapeMismatch("one label per sequence");
  if (seqs.empty()) throw InsufficientData("no sequences to classify");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (fx.predict(adjust_length(seqs[i], target_len, rng)) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(seqs.size());
}

double mms(const Eigen::MatrixXd& gen, const Eigen::MatrixXd& train) {
  if (gen.rows() == 0 || train.rows() == 0) throw InsufficientData("MMS needs nonempty feature sets");
  if (gen.cols() != train.cols()) throw DimensionMismatch("feature sets differ in dimension");
  double total = 0.0;
  for (Eigen::Index i = 0; i < gen.rows(); ++i) {
    total += std::sqrt((train.rowwise() - gen.row(i)).rowwise().squaredNorm().minCoeff());
  }
  return total / static_cast<double>(gen.rows());
}

double mms_baseline(std::span<const MotionSequence> train, const FeatureExtractor& fx, int target_len, Rng& rng) {
  const Eigen::MatrixXd a = extract_features(train, fx, target_len, rng);
  const Eigen::MatrixXd b = extract_features(train, fx, target_len, rng);
  return mms(a, b);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw InsufficientData("Welch test needs at least 2 values per sample");
  auto moments = [](std::span<const double> x) {
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return std::pair{m, s / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double se2 = va / na + vb / nb;
  WelchResult r;
  if (se2 == 0.0) {
    r.t = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
    r.df = na + nb - 2.0;
    r.p_value = ma == mb ? 1.0 : 0.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace imotion
