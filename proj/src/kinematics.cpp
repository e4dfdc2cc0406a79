#include "imotion/kinematics.hpp"

#include <Eigen/Geometry>

#include <cmath>

#include "imotion/error.hpp"

namespace imotion {

namespace {

struct GramSchmidt {
  Eigen::Vector3d a1, a2, b1, b2, b3, u;
  double n1 = 0, nu = 0;
  bool clamped1 = false, clampedu = false;
};

GramSchmidt gram_schmidt(std::span<const double> r, bool strict) {
  GramSchmidt g;
  g.a1 = Eigen::Vector3d(r[0], r[1], r[2]);
  g.a2 = Eigen::Vector3d(r[3], r[4], r[5]);
  g.n1 = g.a1.norm();
  if (!(g.n1 > kRotationEps)) {
    if (strict) throw DegenerateRotation("first column norm below threshold");
    g.n1 = kRotationEps;
    g.clamped1 = true;
  }
  g.b1 = g.a1 / g.n1;
  g.u = g.a2 - g.b1.dot(g.a2) * g.b1;
  g.nu = g.u.norm();
  if (!(g.nu > kRotationEps)) {
    if (strict) throw DegenerateRotation("second column is parallel to the first");
    g.nu = kRotationEps;
    g.clampedu = true;
  }
  g.b2 = g.u / g.nu;
  g.b3 = g.b1.cross(g.b2);
  return g;
}

Eigen::Matrix3d to_matrix(const GramSchmidt& g) {
  Eigen::Matrix3d m;
  m.col(0) = g.b1;
  m.col(1) = g.b2;
  m.col(2) = g.b3;
  return m;
}

void gram_schmidt_backward(const GramSchmidt& g, const Eigen::Matrix3d& gm, double* out) {
  const Eigen::Vector3d g3 = gm.col(2);
  Eigen::Vector3d gb1 = gm.col(0) + g.b2.cross(g3);
  const Eigen::Vector3d gb2 = gm.col(1) + g3.cross(g.b1);

  Eigen::Vector3d gu =
      g.clampedu ? Eigen::Vector3d(gb2 / g.nu) : Eigen::Vector3d((gb2 - g.b2 * g.b2.dot(gb2)) / g.nu);
  const double d = g.b1.dot(g.a2);
  const Eigen::Vector3d ga2 = gu - g.b1 * g.b1.dot(gu);
  gb1 -= d * gu + g.b1.dot(gu) * g.a2;
  const Eigen::Vector3d ga1 = g.clamped1 ? Eigen::Vector3d(gb1 / g.n1)
                                         : Eigen::Vector3d((gb1 - g.b1 * g.b1.dot(gb1)) / g.n1);
  for (int i = 0; i < 3; ++i) {
    out[i] += ga1[i];
    out[3 + i] += ga2[i];
  }
}

}  // namespace

void SkeletonTopology::validate() const {
  if (parent.empty()) throw TopologyMismatch("skeleton has no joints");
  if (offset.size() != parent.size()) throw TopologyMismatch("offset count differs from joint count");
  if (parent[0] != kNoParent) throw TopologyMismatch("joint 0 must be the root");
  for (std::size_t j = 1; j < parent.size(); ++j) {
    if (parent[j] < 0 || static_cast<std::size_t>(parent[j]) >= j) {
      throw TopologyMismatch("joint " + std::to_string(j) + " has invalid parent");
    }
  }
  for (const auto& o : offset) {
    if (!o.allFinite()) throw TopologyMismatch("non-finite bone offset");
  }
}

const SkeletonTopology& default_skeleton() {
  static const SkeletonTopology topo = [] {
    SkeletonTopology t;
    struct J {
      int parent;
      double x, y, z;
    };
    // clang-format off
    static constexpr J joints[24] = {
        {-1,  0.00,  0.00,  0.00},  // 0 pelvis
        { 0,  0.06, -0.09,  0.00},  // 1 left hip
        { 0, -0.06, -0.09,  0.00},  // 2 right hip
        { 0,  0.00,  0.11,  0.00},  // 3 spine 1
        { 1,  0.04, -0.38,  0.00},  // 4 left knee
        { 2, -0.04, -0.38,  0.00},  // 5 right knee
        { 3,  0.00,  0.13,  0.00},  // 6 spine 2
        { 4,  0.00, -0.40, -0.04},  // 7 left ankle
        { 5,  0.00, -0.40, -0.04},  // 8 right ankle
        { 6,  0.00,  0.05,  0.02},  // 9 spine 3
        { 7,  0.02, -0.05,  0.12},  // 10 left foot
        { 8, -0.02, -0.05,  0.12},  // 11 right foot
        { 9,  0.00,  0.21, -0.03},  // 12 neck
        { 9,  0.08,  0.12, -0.02},  // 13 left collar
        { 9, -0.08,  0.12, -0.02},  // 14 right collar
        {12,  0.00,  0.09,  0.05},  // 15 head
        {13,  0.12,  0.04, -0.01},  // 16 left shoulder
        {14, -0.12,  0.04, -0.01},  // 17 right shoulder
        {16,  0.26,  0.00,  0.00},  // 18 left elbow
        {17, -0.26,  0.00,  0.00},  // 19 right elbow
        {18,  0.25,  0.00,  0.00},  // 20 left wrist
        {19, -0.25,  0.00,  0.00},  // 21 right wrist
        {20,  0.08,  0.00,  0.00},  // 22 left hand
        {21, -0.08,  0.00,  0.00},  // 23 right hand
    };
    // clang-format on
    for (const auto& j : joints) {
      t.parent.push_back(j.parent);
      t.offset.emplace_back(j.x, j.y, j.z);
    }
    t.validate();
    return t;
  }();
  return topo;
}

Rotation6D Pose::rotation(std::size_t joint) const {
  Rotation6D r;
  for (std::size_t k = 0; k < 6; ++k) r[k] = values[6 * joint + k];
  return r;
}

void Pose::set_rotation(std::size_t joint, const Rotation6D& r) {
  for (std::size_t k = 0; k < 6; ++k) values[6 * joint + k] = r[k];
}

Eigen::Matrix3d rot6d_to_matrix(const Rotation6D& r) { return to_matrix(gram_schmidt(r, true)); }

Rotation6D matrix_to_rot6d(const Eigen::Matrix3d& m) {
  return {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
}

Rotation6D rot6d_to_matrix_backward(const Rotation6D& r, const Eigen::Matrix3d& grad_matrix) {
  Rotation6D out{};
  gram_schmidt_backward(gram_schmidt(r, true), grad_matrix, out.data());
  return out;
}

std::vector<Eigen::Vector3d> forward_kinematics(const Pose& pose, const SkeletonTopology& topo) {
  if (static_cast<std::size_t>(pose.values.size()) != topo.pose_dim()) {
    throw TopologyMismatch("pose has " + std::to_string(pose.values.size()) +
                           " values, skeleton expects " + std::to_string(topo.pose_dim()));
  }
  const std::size_t P = topo.joint_count();
  std::vector<Eigen::Matrix3d> global(P);
  std::vector<Eigen::Vector3d> position(P);
  for (std::size_t j = 0; j < P; ++j) {
    const Eigen::Matrix3d local = rot6d_to_matrix(pose.rotation(j));
    if (j == 0) {
      global[0] = local;
      position[0] = pose.root_translation();
    } else {
      const auto q = static_cast<std::size_t>(topo.parent[j]);
      global[j] = global[q] * local;
      position[j] = position[q] + global[q] * topo.offset[j];
    }
  }
  return position;
}

FkTape forward_kinematics_tape(std::span<const double> pose, const SkeletonTopology& topo,
                               bool include_root_translation) {
  if (pose.size() != topo.pose_dim()) throw TopologyMismatch("pose dimension differs from skeleton");
  const std::size_t P = topo.joint_count();
  FkTape tape;
  tape.local.resize(P);
  tape.global.resize(P);
  tape.position.resize(P);
  for (std::size_t j = 0; j < P; ++j) {
    tape.local[j] = to_matrix(gram_schmidt(pose.subspan(6 * j, 6), false));
    if (j == 0) {
      tape.global[0] = tape.local[0];
      tape.position[0] = include_root_translation
                             ? Eigen::Vector3d(pose[6 * P], pose[6 * P + 1], pose[6 * P + 2])
                             : Eigen::Vector3d::Zero();
    } else {
      const auto q = static_cast<std::size_t>(topo.parent[j]);
      tape.global[j] = tape.global[q] * tape.local[j];
      tape.position[j] = tape.position[q] + tape.global[q] * topo.offset[j];
    }
  }
  return tape;
}

void forward_kinematics_backward(std::span<const double> pose, const FkTape& tape,
                                 const SkeletonTopology& topo,
                                 std::span<const Eigen::Vector3d> grad_position,
                                 std::span<double> grad_pose, bool include_root_translation) {
  const std::size_t P = topo.joint_count();
  std::vector<Eigen::Vector3d> gp(grad_position.begin(), grad_position.end());
  std::vector<Eigen::Matrix3d> gG(P, Eigen::Matrix3d::Zero());
  for (std::size_t j = P; j-- > 1;) {
    const auto q = static_cast<std::size_t>(topo.parent[j]);
    gp[q] += gp[j];
    gG[q] += gp[j] * topo.offset[j].transpose();
    gG[q] += gG[j] * tape.local[j].transpose();
    const Eigen::Matrix3d gR = tape.global[q].transpose() * gG[j];
    gram_schmidt_backward(gram_schmidt(pose.subspan(6 * j, 6), false), gR, grad_pose.data() + 6 * j);
  }
  gram_schmidt_backward(gram_schmidt(pose.subspan(0, 6), false), gG[0], grad_pose.data());
  if (include_root_translation) {
    for (int k = 0; k < 3; ++k) grad_pose[6 * P + k] += gp[0][k];
  }
}

}  // namespace imotion
