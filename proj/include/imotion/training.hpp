#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imotion/codes.hpp"
#include "imotion/data.hpp"
#include "imotion/decoder.hpp"
#include "imotion/kinematics.hpp"
#include "imotion/rng.hpp"

namespace imotion {

struct TrainConfig {
  double kl_weight = 1e-5;
  double lr_decoder = 1e-3;
  double lr_codes = 1e-3;
  int epochs = 10000;
  int temporal_minibatch_size = 5;
  int batch_size = 32;
  Composition composition = Composition::kConcat;
  double init_logvar = 1.0;
  std::uint64_t seed = 0;
  double root_loss_weight = 1.0;

  std::vector<std::size_t> hidden = {1000, 500, 500, 200, 100};
  std::size_t action_dim = 128;
  std::size_t sequence_dim = 128;
  TemporalEmbeddingConfig embedding;
  int threads = 1;

  // Throws InvalidArgument on non-positive sizes or rates.
  void validate() const;
  std::size_t code_dim() const { return composed_dim(action_dim, sequence_dim, composition); }
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);
// Overrides only the keys present in `j`; unknown keys raise InvalidArgument.
void apply_json(TrainConfig& cfg, const nlohmann::json& j);

struct LossOptions {
  double root_loss_weight = 1.0;
  TemporalEmbeddingConfig embedding;
};

struct ReconstructionResult {
  double loss = 0.0;
  Eigen::VectorXd grad_code;
  std::vector<double> grad_params;
};

// Mean over `time_subset` of the per-frame loss
//   |rot6d - target|^2 + root_weight |root - target|^2 + sum_j |p_j - p_j*|^2
// where p_j are root-relative joint positions from forward kinematics.
// Throws EmptyTimeSubset, DimensionMismatch, InvalidArgument (index out of range).
ReconstructionResult reconstruction_loss(const MotionSequence& seq, const Eigen::VectorXd& code_sample,
                                         const MlpDecoder& dec, const SkeletonTopology& topo,
                                         std::span<const int> time_subset, const LossOptions& opts);

struct LossBreakdown {
  double reconstruction = 0.0;
  double kl = 0.0;  // KL(alpha) + KL(beta)
  double total = 0.0;
};

// One reparameterized sample of each code over every frame of `seq`.
// Throws UnknownSequence when the sequence has no code.
LossBreakdown total_loss(const MotionSequence& seq, const CodeBook& book, const MlpDecoder& dec,
                         const TrainConfig& cfg, Rng& rng);

struct EpochLog {
  int epoch = 0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// Uniform without replacement; all frames when T <= k. Returned sorted.
std::vector<int> sample_time_subset(int length, int k, Rng& rng);

// Everything needed to continue optimization.
struct TrainState {
  TrainConfig config;
  MlpDecoder decoder;
  AdamState decoder_adam;
  CodeBook codebook;
  std::map<std::string, AdamState> sequence_adam;
  std::map<int, AdamState> action_adam;
  int epoch = 0;
  std::vector<EpochLog> history;

  std::uint64_t rng_digest() const;
};

TrainState init_training(const MotionDataset& data, const TrainConfig& cfg);

class Trainer {
 public:
  Trainer(const MotionDataset& data, TrainState state);

  // Shuffles, then for each batch: (1) updates that batch's beta and alpha
  // codes with the decoder frozen, (2) updates the decoder with codes frozen.
  // Both steps draw their own noise and temporal mini-batches.
  EpochLog run_epoch();
  void run(int epochs);

  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }

  // Exposed for testing the alternating scheme.
  void code_step(std::span<const std::size_t> batch, Rng& rng, EpochLog* log);
  void decoder_step(std::span<const std::size_t> batch, Rng& rng);

 private:
  struct Target;
  const MotionDataset& data_;
  TrainState state_;
  std::vector<std::shared_ptr<const Target>> targets_;
  std::vector<Eigen::VectorXd> embeddings_;
};

struct TrainResult {
  MlpDecoder decoder;
  CodeBook codebook;
  std::vector<EpochLog> history;
};

// Throws EmptyDataset.
TrainResult train(const MotionDataset& data, const TrainConfig& cfg);

// A checkpoint is the full training state.
using Checkpoint = TrainState;

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
// Throws IoError, FormatVersionMismatch.
TrainState load_checkpoint(const std::filesystem::path& path);

// CSV "epoch,rec_loss,kl_loss,total".
void write_loss_log(const std::filesystem::path& path, std::span<const EpochLog> history);

}  // namespace imotion
