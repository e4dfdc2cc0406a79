#pragma once

#include <Eigen/Core>

#include <array>
#include <span>
#include <string>
#include <vector>

namespace imotion {

inline constexpr double kRotationEps = 1e-8;

// Two stacked 3-vectors a1, a2: the first two columns of a rotation matrix,
// not necessarily orthonormal.
using Rotation6D = std::array<double, 6>;

struct SkeletonTopology {
  static constexpr int kNoParent = -1;

  std::vector<int> parent;
  std::vector<Eigen::Vector3d> offset;

  std::size_t joint_count() const { return parent.size(); }
  std::size_t pose_dim() const { return 6 * joint_count() + 3; }

  // Throws TopologyMismatch unless there is exactly one root (joint 0),
  // every parent index precedes its child, and offsets are finite.
  void validate() const;
};

// Fixed 24-joint humanoid tree (pelvis root, spine chain, two legs, two arms).
const SkeletonTopology& default_skeleton();

// Flattened pose: P 6D rotations (joint 0 is the global orientation) followed
// by the root translation.
struct Pose {
  Eigen::VectorXd values;

  Pose() = default;
  explicit Pose(Eigen::VectorXd v) : values(std::move(v)) {}

  std::size_t joint_count() const { return (values.size() - 3) / 6; }
  Rotation6D rotation(std::size_t joint) const;
  void set_rotation(std::size_t joint, const Rotation6D& r);
  Eigen::Vector3d root_translation() const { return values.tail<3>(); }
  void set_root_translation(const Eigen::Vector3d& t) { values.tail<3>() = t; }
};

struct MotionSequence {
  std::string id;
  int action = 0;
  std::vector<Pose> poses;

  std::size_t length() const { return poses.size(); }
};

// Gram-Schmidt decoding. Throws DegenerateRotation when either column
// norm falls below kRotationEps.
Eigen::Matrix3d rot6d_to_matrix(const Rotation6D& r);
Rotation6D matrix_to_rot6d(const Eigen::Matrix3d& m);

// Gradient of <grad_matrix, rot6d_to_matrix(r)> with respect to r.
Rotation6D rot6d_to_matrix_backward(const Rotation6D& r, const Eigen::Matrix3d& grad_matrix);

// World joint positions. Throws TopologyMismatch on dimension disagreement.
std::vector<Eigen::Vector3d> forward_kinematics(const Pose& pose, const SkeletonTopology& topo);

// Intermediate values of one forward pass, kept for the backward pass. Norms
// are clamped at kRotationEps instead of throwing so that arbitrary decoder
// outputs can be pushed through during optimization.
struct FkTape {
  std::vector<Eigen::Matrix3d> local;
  std::vector<Eigen::Matrix3d> global;
  std::vector<Eigen::Vector3d> position;
};

FkTape forward_kinematics_tape(std::span<const double> pose, const SkeletonTopology& topo,
                               bool include_root_translation);

// Accumulates d(loss)/d(pose) into grad_pose given d(loss)/d(position).
void forward_kinematics_backward(std::span<const double> pose, const FkTape& tape,
                                 const SkeletonTopology& topo,
                                 std::span<const Eigen::Vector3d> grad_position,
                                 std::span<double> grad_pose, bool include_root_translation);

}  // namespace imotion
