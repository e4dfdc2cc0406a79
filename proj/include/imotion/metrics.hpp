#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imotion/data.hpp"
#include "imotion/kinematics.hpp"
#include "imotion/rng.hpp"

namespace imotion {

inline constexpr int kEvalLength = 60;

// Pads by repeating the last pose, or crops a uniformly random window.
// Throws InvalidArgument when target_len < 1 or the sequence is empty.
MotionSequence adjust_length(const MotionSequence& seq, int target_len, Rng& rng);

// GRU action classifier over standardized pose frames. The feature of a
// motion is the final hidden state; a linear head gives class logits.
//   z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br)
//   n = tanh(Wn x + Un (r*h) + bn), h' = (1-z)*n + z*h
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(std::size_t input_dim, std::size_t hidden, std::size_t classes);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_; }
  std::size_t classes() const { return classes_; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  Eigen::VectorXd& input_mean() { return mean_; }
  Eigen::VectorXd& input_scale() { return scale_; }
  const Eigen::VectorXd& input_mean() const { return mean_; }
  const Eigen::VectorXd& input_scale() const { return scale_; }

  // Over the parameters and the standardization.
  std::uint64_t digest() const;

  // Frames as columns (input_dim x T), not yet standardized.
  Eigen::VectorXd features(const Eigen::MatrixXd& frames) const;
  Eigen::VectorXd features(const MotionSequence& seq) const;
  Eigen::VectorXd logits(const Eigen::VectorXd& feature) const;
  int predict(const MotionSequence& seq) const;

  // Batched forward/backward used by training; every element of `batch` has
  // the same length. Returns the mean cross-entropy and accumulates its
  // gradient into grad (size = parameters().size()).
  double loss_and_gradient(std::span<const Eigen::MatrixXd> batch, std::span<const int> labels,
                           std::span<double> grad, int* correct = nullptr) const;

 private:
  struct Views;
  Views views() const;

  std::size_t input_dim_ = 0, hidden_ = 0, classes_ = 0;
  std::vector<double> params_;
  Eigen::VectorXd mean_, scale_;
};

struct ExtractorTrainConfig {
  std::size_t hidden = 64;
  int epochs = 40;
  int batch_size = 32;
  double learning_rate = 3e-3;
  int target_len = kEvalLength;
  double scale_floor = 0.1;  // lower bound on per-dimension standard deviation
  std::uint64_t seed = 7;
};

struct ExtractorTrainLog {
  std::vector<double> loss;           // per epoch
  std::vector<double> train_accuracy;  // per epoch, on the windows seen that epoch
};

// Throws EmptyDataset.
FeatureExtractor train_feature_extractor(const MotionDataset& data, const ExtractorTrainConfig& cfg,
                                         ExtractorTrainLog* log = nullptr);

void save_feature_extractor(const std::filesystem::path& path, const FeatureExtractor& fx);
// Throws IoError, FormatVersionMismatch (including a digest mismatch).
FeatureExtractor load_feature_extractor(const std::filesystem::path& path);

// One row per sequence, after adjust_length.
Eigen::MatrixXd extract_features(std::span<const MotionSequence> seqs, const FeatureExtractor& fx,
                                 int target_len, Rng& rng);

struct FidResult {
  double value = 0.0;
  bool degenerate_covariance = false;  // a covariance was rank-deficient; 1e-10 I jitter applied
};
// Rows are samples; unbiased covariances.
FidResult fid(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b);
FidResult fid_from_moments(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& sigma_a,
                           const Eigen::VectorXd& mu_b, const Eigen::MatrixXd& sigma_b);

// Mean distance between two random subsets of `subset` rows each, paired by
// position. Rows are drawn without replacement when there are enough of
// them. Throws InsufficientData for fewer than 2 rows.
double diversity(const Eigen::MatrixXd& features, int subset, Rng& rng);
// Diversity within each action (ascending label order), averaged.
double multimodality(const Eigen::MatrixXd& features, std::span<const int> labels, int subset, Rng& rng);

double accuracy(std::span<const MotionSequence> seqs, std::span<const int> labels, const FeatureExtractor& fx,
                int target_len, Rng& rng);

// Mean over generated rows of the distance to the nearest training row.
double mms(const Eigen::MatrixXd& features_gen, const Eigen::MatrixXd& features_train);
// MMS between two independent extractions of the training set.
double mms_baseline(std::span<const MotionSequence> train, const FeatureExtractor& fx, int target_len, Rng& rng);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;  // two-sided
};
// Throws InsufficientData unless both samples have at least 2 values.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct MetricRow {
  std::string name;
  double mean = 0.0;
  double half_width = 0.0;  // 1.96 * sd / sqrt(repeats)
  int repeats = 0;
  std::vector<double> values;
};

struct MetricsReport {
  std::vector<MetricRow> rows;
  std::uint64_t extractor_digest = 0;
  int target_len = kEvalLength;
  int generated_per_repeat = 0;

  const MetricRow& row(const std::string& name) const;
};

MetricRow summarize(std::string name, std::vector<double> values);

// Emits one sequence of the requested action and length.
using MotionGenerator = std::function<MotionSequence(int action, int length, Rng& rng)>;

// Returns a random training sequence of the requested action, preferring
// one of exactly the requested length.
MotionGenerator replay_generator(const MotionDataset& train);

struct EvalOptions {
  int repeats = 20;
  int target_len = kEvalLength;
  int generated_count = 0;  // 0: as many as training sequences
  int diversity_subset = 200;
  int multimodality_subset = 20;
  int threads = 1;
  std::uint64_t seed = 0;
};

// Per repeat: draw (action, length) pairs from the training sequences,
// generate, and compute fid, accuracy, diversity, multimodality, mms and
// mms_baseline, plus the same statistics on real data for reference.
MetricsReport evaluate(const MotionGenerator& gen, const MotionDataset& train, const FeatureExtractor& fx,
                       const EvalOptions& opts);

nlohmann::ordered_json to_json(const MetricsReport& report, bool with_timestamp);
void write_report(const std::filesystem::path& path, const MetricsReport& report, bool with_timestamp);

}  // namespace imotion
