#include "imotion/data.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "imotion/error.hpp"
#include "imotion/rng.hpp"

namespace imotion {

namespace {

constexpr double kPi = std::numbers::pi;

double smoothstep(double s) { return s * s * (3.0 - 2.0 * s); }

Eigen::Vector3d axis_vector(int axis) {
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  v[axis] = 1.0;
  return v;
}

}  // namespace

SyntheticDatasetSpec default_dataset_spec() {
  SyntheticDatasetSpec spec;
  auto& a = spec.actions;

  ActionTemplate wave;
  wave.name = "wave";
  wave.waves = {{17, 2, -1.3, 0.5, 0.0}, {19, 1, 0.9, 3.0, 0.0}, {15, 1, 0.2, 1.0, 0.0}};
  wave.min_length = 8;
  wave.max_length = 60;
  a.push_back(wave);

  ActionTemplate walk;
  walk.name = "walk";
  walk.waves = {{1, 0, 0.6, 2.0, 0.0},
                {2, 0, 0.6, 2.0, kPi},
                {4, 0, 0.5, 2.0, kPi / 2},
                {5, 0, 0.5, 2.0, 3 * kPi / 2},
                {16, 0, 0.3, 2.0, kPi},
                {17, 0, 0.3, 2.0, 0.0}};
  walk.root_displacement = {0.0, 0.0, 1.6};
  walk.root_bounce = 0.04;
  walk.root_bounce_cycles = 4.0;
  walk.min_length = 30;
  walk.max_length = 120;
  a.push_back(walk);

  ActionTemplate jump;
  jump.name = "jump";
  jump.waves = {{1, 0, -0.9, 0.5, 0.0},
                {2, 0, -0.9, 0.5, 0.0},
                {4, 0, 1.2, 0.5, 0.0},
                {5, 0, 1.2, 0.5, 0.0},
                {16, 2, 1.0, 1.0, 0.0},
                {17, 2, -1.0, 1.0, 0.0}};
  jump.root_bounce = 0.45;
  jump.root_bounce_cycles = 1.0;
  jump.min_length = 10;
  jump.max_length = 70;
  a.push_back(jump);

  ActionTemplate turn;
  turn.name = "turn";
  turn.waves = {{6, 1, 0.4, 1.0, 0.0}, {12, 1, 0.5, 1.0, 0.0}, {1, 1, 0.3, 2.0, 0.0}};
  turn.root_yaw = kPi;
  turn.min_length = 20;
  turn.max_length = 100;
  a.push_back(turn);

  ActionTemplate box;
  box.name = "box";
  box.waves = {{16, 1, 1.0, 4.0, 0.0},
               {17, 1, -1.0, 4.0, kPi},
               {18, 1, 1.2, 4.0, 0.0},
               {19, 1, -1.2, 4.0, kPi},
               {3, 1, 0.25, 4.0, 0.0}};
  box.min_length = 8;
  box.max_length = 90;
  a.push_back(box);

  ActionTemplate squat;
  squat.name = "squat";
  squat.waves = {{1, 0, -1.3, 0.5, 0.0},
                 {2, 0, -1.3, 0.5, 0.0},
                 {4, 0, 1.7, 0.5, 0.0},
                 {5, 0, 1.7, 0.5, 0.0},
                 {3, 0, 0.5, 0.5, 0.0},
                 {16, 1, -0.8, 0.5, 0.0},
                 {17, 1, 0.8, 0.5, 0.0}};
  squat.root_bounce = -0.35;
  squat.root_bounce_cycles = 0.5;
  squat.min_length = 15;
  squat.max_length = 110;
  a.push_back(squat);

  return spec;
}

std::size_t MotionDataset::action_count() const {
  int m = -1;
  for (const auto& s : sequences) m = std::max(m, s.action);
  return static_cast<std::size_t>(m + 1);
}

const MotionSequence& MotionDataset::find(const std::string& id) const {
  for (const auto& s : sequences) {
    if (s.id == id) return s;
  }
  throw UnknownSequence("no sequence with id '" + id + "'");
}

void MotionDataset::validate() const {
  std::set<std::string> ids;
  for (const auto& s : sequences) {
    if (!ids.insert(s.id).second) throw InvalidArgument("duplicate sequence id '" + s.id + "'");
    if (s.action < 0) throw InvalidArgument("negative action label in '" + s.id + "'");
    if (s.poses.empty()) throw InvalidArgument("sequence '" + s.id + "' has no frames");
    for (const auto& p : s.poses) {
      if (static_cast<std::size_t>(p.values.size()) != skeleton.pose_dim()) {
        throw InvalidArgument("sequence '" + s.id + "' has pose of wrong dimension");
      }
    }
  }
}

MotionDataset generate_synthetic_dataset(const SyntheticDatasetSpec& spec) {
  const SkeletonTopology& topo = default_skeleton();
  const std::size_t P = topo.joint_count();
  MotionDataset out;
  out.split = spec.split;
  const Rng base = Rng(spec.seed).split(spec.split == Split::kTrain ? 0x7261696EULL : 0x74657374ULL);

  for (std::size_t z = 0; z < spec.actions.size(); ++z) {
    const ActionTemplate& tpl = spec.actions[z];
    if (tpl.min_length < 1 || tpl.max_length < tpl.min_length) {
      throw InvalidArgument("action '" + tpl.name + "' has an invalid length range");
    }
    for (int n = 0; n < spec.sequences_per_action; ++n) {
      Rng rng = base.split(z * 100003ULL + static_cast<std::uint64_t>(n));
      const int span = tpl.max_length - tpl.min_length + 1;
      const int T = tpl.min_length + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(span)));
      std::vector<double> amp(tpl.waves.size()), phase(tpl.waves.size());
      for (std::size_t w = 0; w < tpl.waves.size(); ++w) {
        amp[w] = tpl.waves[w].amplitude * (1.0 + spec.amplitude_jitter * (2.0 * rng.uniform() - 1.0));
        phase[w] = tpl.waves[w].phase + spec.phase_jitter * rng.normal();
      }
      const double travel = 1.0 + spec.amplitude_jitter * (2.0 * rng.uniform() - 1.0);

      MotionSequence seq;
      seq.action = static_cast<int>(z);
      char id[32];
      std::snprintf(id, sizeof id, "a%zu_s%03d", z, n);
      seq.id = id;
      for (int t = 0; t < T; ++t) {
        const double s = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
        const double window = std::sin(kPi * s);
        std::vector<Eigen::Matrix3d> local(P, Eigen::Matrix3d::Identity());
        for (std::size_t w = 0; w < tpl.waves.size(); ++w) {
          const JointWave& jw = tpl.waves[w];
          double angle = amp[w] * std::sin(2.0 * kPi * jw.cycles * s + phase[w]) * window;
          if (spec.noise > 0.0) angle += spec.noise * rng.normal();
          local[jw.joint] = local[jw.joint] * Eigen::AngleAxisd(angle, axis_vector(jw.axis)).toRotationMatrix();
        }
        local[0] = Eigen::AngleAxisd(tpl.root_yaw * travel * smoothstep(s), Eigen::Vector3d::UnitY())
                       .toRotationMatrix() *
                   local[0];

        Pose pose(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.pose_dim())));
        for (std::size_t j = 0; j < P; ++j) pose.set_rotation(j, matrix_to_rot6d(local[j]));
        Eigen::Vector3d root = tpl.root_displacement * travel * smoothstep(s);
        root.y() += tpl.root_bounce * travel * std::abs(std::sin(kPi * tpl.root_bounce_cycles * s));
        pose.set_root_translation(root);
        seq.poses.push_back(std::move(pose));
      }
      out.sequences.push_back(std::move(seq));
    }
  }
  return out;
}

void write_motions(const std::filesystem::path& path, const MotionDataset& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& s : data.sequences) {
    nlohmann::json j;
    j["id"] = s.id;
    j["action"] = s.action;
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& p : s.poses) {
      frames.push_back(std::vector<double>(p.values.data(), p.values.data() + p.values.size()));
    }
    j["frames"] = std::move(frames);
    f << j.dump() << '\n';
  }
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

MotionDataset read_motions(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  MotionDataset out;
  const std::size_t dim = out.skeleton.pose_dim();
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> ids;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError(lineno, "record is not an object");
    for (const char* field : {"id", "action", "frames"}) {
      if (!j.contains(field)) throw SchemaError(lineno, std::string("missing field '") + field + "'");
    }
    if (!j["id"].is_string()) throw SchemaError(lineno, "field 'id' must be a string");
    if (!j["action"].is_number_integer() || j["action"].get<long long>() < 0) {
      throw SchemaError(lineno, "field 'action' must be a non-negative integer");
    }
    if (!j["frames"].is_array() || j["frames"].empty()) {
      throw SchemaError(lineno, "field 'frames' must be a non-empty array");
    }
    MotionSequence seq;
    seq.id = j["id"].get<std::string>();
    if (!ids.insert(seq.id).second) throw SchemaError(lineno, "duplicate id '" + seq.id + "'");
    seq.action = j["action"].get<int>();
    for (const auto& fr : j["frames"]) {
      if (!fr.is_array() || fr.size() != dim) {
        throw SchemaError(lineno, "field 'frames' entries must be arrays of " + std::to_string(dim) + " numbers");
      }
      Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
      for (std::size_t k = 0; k < dim; ++k) {
        if (!fr[k].is_number()) throw SchemaError(lineno, "field 'frames' contains a non-number");
        v[static_cast<Eigen::Index>(k)] = fr[k].get<double>();
      }
      seq.poses.emplace_back(std::move(v));
    }
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

}  // namespace imotion
