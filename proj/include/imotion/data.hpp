#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imotion/kinematics.hpp"

namespace imotion {

enum class Split { kTrain, kTest };

// One sinusoidal joint-angle channel: amplitude * sin(2 pi cycles s + phase),
// windowed by sin(pi s) so every cycle starts and ends at rest. s = t / (T-1).
struct JointWave {
  int joint = 0;
  int axis = 0;  // 0 = x, 1 = y, 2 = z in the joint's parent frame
  double amplitude = 0.0;
  double cycles = 1.0;
  double phase = 0.0;
};

struct ActionTemplate {
  std::string name;
  std::vector<JointWave> waves;
  Eigen::Vector3d root_displacement = Eigen::Vector3d::Zero();  // total travel over the action
  double root_bounce = 0.0;                                     // vertical |sin| bounce height
  double root_bounce_cycles = 1.0;
  double root_yaw = 0.0;  // total turn about the vertical axis, radians
  int min_length = 8;
  int max_length = 120;
};

struct SyntheticDatasetSpec {
  std::vector<ActionTemplate> actions;
  int sequences_per_action = 40;
  double noise = 0.01;            // per-frame angle noise, radians
  double amplitude_jitter = 0.2;  // per-sequence amplitude scale in [1-j, 1+j]
  double phase_jitter = 0.2;
  std::uint64_t seed = 0;
  Split split = Split::kTrain;

  std::size_t action_count() const { return actions.size(); }
};

// Six classes (wave, walk, jump, turn, box, squat) spanning lengths 8..120.
SyntheticDatasetSpec default_dataset_spec();

struct MotionDataset {
  std::vector<MotionSequence> sequences;
  SkeletonTopology skeleton = default_skeleton();
  Split split = Split::kTrain;

  std::size_t size() const { return sequences.size(); }
  bool empty() const { return sequences.empty(); }
  // max label + 1 (0 for an empty dataset)
  std::size_t action_count() const;
  const MotionSequence& find(const std::string& id) const;
  // Throws InvalidArgument on duplicate ids or mismatched pose dimensions.
  void validate() const;
};

MotionDataset generate_synthetic_dataset(const SyntheticDatasetSpec& spec);

// One JSON object per line: {"id": ..., "action": ..., "frames": [[...], ...]}.
void write_motions(const std::filesystem::path& path, const MotionDataset& data);
MotionDataset read_motions(const std::filesystem::path& path);

}  // namespace imotion
