#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imotion/codes.hpp"
#include "imotion/data.hpp"
#include "imotion/decoder.hpp"
#include "imotion/rng.hpp"

namespace imotion {

// Inclusive range of sequence lengths.
struct LengthInterval {
  int t_left = 0;
  int t_right = 0;

  bool contains(int length) const { return t_left <= length && length <= t_right; }
  int width() const { return t_right - t_left; }
  bool operator==(const LengthInterval&) const = default;
};

struct IntervalOptions {
  int d_min = 10;
  int p_min = 8;
  int d_overlap = 2;
};

// Greedy left-to-right interval construction. Every interval holds at least
// p_min lengths; the last one is widened leftward until it does.
// Throws InsufficientData when fewer than p_min lengths are given and
// InvalidArgument when the options violate d_min > d_overlap >= 0, p_min >= 1.
std::vector<LengthInterval> fit_intervals(std::span<const int> lengths, const IntervalOptions& opts);

// Diagonal-covariance mixture. Columns of `means` / `variances` are components.
struct GaussianMixture {
  Eigen::VectorXd weights;
  Eigen::MatrixXd means;
  Eigen::MatrixXd variances;

  std::size_t components() const { return static_cast<std::size_t>(weights.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(means.rows()); }

  // Mean log-density over the columns of `samples`.
  double mean_log_likelihood(const Eigen::MatrixXd& samples) const;
  std::size_t sample_component(Rng& rng) const;
  Eigen::VectorXd sample(Rng& rng) const;
};

struct GmmOptions {
  int k_init = 15;
  double collapse_threshold_ratio = 0.1;
  int max_retries = 100;
  int max_iterations = 500;
  double tolerance = 1e-6;  // on the mean log-likelihood gain
  double variance_floor = 1e-6;
};

struct GmmFitReport {
  int components = 0;
  int attempts = 0;          // EM runs across all component counts
  bool accepted_collapsed = false;  // a single component was still within the threshold
  std::vector<double> log_likelihood_trace;  // of the accepted run
};

// One EM run from a random initialization (K distinct samples as means,
// pooled per-dimension variance, uniform weights). `trace`, when given,
// receives the mean log-likelihood after every E-step.
GaussianMixture em_fit(const Eigen::MatrixXd& samples, int k, const GmmOptions& opts, Rng& rng,
                       std::vector<double>* trace = nullptr);

// ratio * mean column norm of `samples`.
double collapse_threshold(const Eigen::MatrixXd& samples, double ratio);

// True when any component mean lies within `threshold` of any reference.
bool detect_collapse(const GaussianMixture& gmm, const Eigen::MatrixXd& reference_means, double threshold);

// EM with collapse detection: refit up to max_retries times per component
// count, then decrement K. A single component is accepted as is. Throws
// DegenerateData when all samples coincide and more than one component was
// requested, InsufficientData when there are no samples.
GaussianMixture fit_gmm(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& reference_means,
                        const GmmOptions& opts, Rng& rng, GmmFitReport* report = nullptr);

struct BetaSampleSet {
  std::string id;
  int action = 0;
  int length = 0;
  Eigen::VectorXd mean;     // the optimized beta mean
  Eigen::MatrixXd samples;  // dim x draws
};

// `draws` reparameterized beta draws per training sequence.
std::vector<BetaSampleSet> collect_beta_samples(const CodeBook& book, const MotionDataset& data, int draws,
                                                Rng& rng);

struct ConditionalGmmIndex {
  struct Entry {
    int action = 0;
    LengthInterval interval;
    GaussianMixture gmm;
    int components_requested = 0;
    int attempts = 0;
  };
  std::vector<Entry> entries;  // grouped by action, intervals in increasing order
  std::size_t sequence_dim = 0;

  std::vector<LengthInterval> intervals(int action) const;
  // Interval of `action` containing `length`, smallest width first.
  // Throws LengthOutOfRange.
  const Entry& select(int action, int length) const;
};

struct IndexOptions {
  IntervalOptions intervals;
  GmmOptions gmm;
  int draws = 50;
};

ConditionalGmmIndex build_gmm_index(const CodeBook& book, const MotionDataset& data, const IndexOptions& opts,
                                    std::uint64_t seed);

nlohmann::ordered_json to_json(const ConditionalGmmIndex& index);
ConditionalGmmIndex gmm_index_from_json(const nlohmann::json& j);
void save_gmm_index(const std::filesystem::path& path, const ConditionalGmmIndex& index);
// Throws IoError, FormatVersionMismatch.
ConditionalGmmIndex load_gmm_index(const std::filesystem::path& path);

Eigen::VectorXd sample_beta(const ConditionalGmmIndex& index, int action, int length, Rng& rng);

// Decodes frames t = 0 .. length-1 from a fixed code.
MotionSequence decode_sequence(const MlpDecoder& dec, const Eigen::VectorXd& code, int length,
                               const TemporalEmbeddingConfig& emb);

// beta from the conditional GMM, alpha fixed at the optimized action mean.
MotionSequence generate_motion(const MlpDecoder& dec, const CodeBook& book, const ConditionalGmmIndex& index,
                               int action, int length, const TemporalEmbeddingConfig& emb, Rng& rng);

}  // namespace imotion
