#include <gtest/gtest.h>

#include <Eigen/LU>
#include <fstream>
#include <set>

#include "imotion/data.hpp"
#include "imotion/error.hpp"
#include "support.hpp"

using namespace imotion;
using imotion::testing::TempDir;

namespace {

bool same_dataset(const MotionDataset& a, const MotionDataset& b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.sequences[i];
    const auto& y = b.sequences[i];
    if (x.id != y.id || x.action != y.action || x.length() != y.length()) return false;
    for (std::size_t t = 0; t < x.length(); ++t) {
      if ((x.poses[t].values - y.poses[t].values).cwiseAbs().maxCoeff() > tol) return false;
    }
  }
  return true;
}

}  // namespace

TEST(Synthetic, SameSeedSameDataset) {
  SyntheticDatasetSpec spec = default_dataset_spec();
  spec.sequences_per_action = 3;
  spec.noise = 0.0;
  EXPECT_TRUE(same_dataset(generate_synthetic_dataset(spec), generate_synthetic_dataset(spec), 0.0));
  spec.noise = 0.01;
  EXPECT_TRUE(same_dataset(generate_synthetic_dataset(spec), generate_synthetic_dataset(spec), 0.0));
  SyntheticDatasetSpec other = spec;
  other.seed = spec.seed + 1;
  EXPECT_FALSE(same_dataset(generate_synthetic_dataset(spec), generate_synthetic_dataset(other), 0.0));
}

TEST(Synthetic, DefaultCountsAndLengths) {
  const SyntheticDatasetSpec spec = default_dataset_spec();
  ASSERT_EQ(spec.action_count(), 6u);
  const MotionDataset data = generate_synthetic_dataset(spec);
  EXPECT_EQ(data.size(), 240u);
  EXPECT_EQ(data.action_count(), 6u);
  EXPECT_NO_THROW(data.validate());
  std::vector<std::set<std::size_t>> lengths(6);
  std::size_t lo = 1000, hi = 0;
  for (const auto& s : data.sequences) {
    ASSERT_LT(s.action, 6);
    const auto& tpl = spec.actions[static_cast<std::size_t>(s.action)];
    EXPECT_GE(s.length(), static_cast<std::size_t>(tpl.min_length));
    EXPECT_LE(s.length(), static_cast<std::size_t>(tpl.max_length));
    lengths[static_cast<std::size_t>(s.action)].insert(s.length());
    lo = std::min(lo, s.length());
    hi = std::max(hi, s.length());
  }
  for (const auto& l : lengths) {
    EXPECT_GE(l.size(), 2u);
    EXPECT_GE(*l.rbegin() - *l.begin(), 2u);
  }
  EXPECT_GE(lo, 8u);
  EXPECT_LE(hi, 120u);
}

TEST(Synthetic, EveryRotationIsValid) {
  SyntheticDatasetSpec spec = default_dataset_spec();
  spec.sequences_per_action = 4;
  const MotionDataset data = generate_synthetic_dataset(spec);
  for (const auto& s : data.sequences) {
    for (const auto& p : s.poses) {
      ASSERT_EQ(p.values.size(), 147);
      for (std::size_t j = 0; j < p.joint_count(); ++j) {
        const Eigen::Matrix3d R = rot6d_to_matrix(p.rotation(j));
        EXPECT_LT((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(R.determinant(), 1.0, 1e-9);
      }
    }
  }
}

TEST(Synthetic, InvalidLengthRangeRejected) {
  SyntheticDatasetSpec spec = default_dataset_spec();
  spec.actions[0].min_length = 0;
  EXPECT_THROW(generate_synthetic_dataset(spec), InvalidArgument);
  spec = default_dataset_spec();
  spec.actions[1].min_length = 50;
  spec.actions[1].max_length = 40;
  EXPECT_THROW(generate_synthetic_dataset(spec), InvalidArgument);
}

TEST(MotionFile, RoundTrip) {
  SyntheticDatasetSpec spec = default_dataset_spec();
  spec.sequences_per_action = 2;
  const MotionDataset data = generate_synthetic_dataset(spec);
  TempDir dir("motions");
  write_motions(dir / "m.jsonl", data);
  const MotionDataset back = read_motions(dir / "m.jsonl");
  EXPECT_TRUE(same_dataset(data, back, 1e-12));
  EXPECT_EQ(back.find(data.sequences[3].id).action, data.sequences[3].action);
  EXPECT_THROW(back.find("missing"), UnknownSequence);
}

TEST(MotionFile, MissingActionFieldNamesIt) {
  TempDir dir("schema");
  {
    std::ofstream f(dir / "noaction.jsonl");
    f << R"({"id":"a","frames":[[1,0,0]]})" << "\n";
  }
  try {
    read_motions(dir / "noaction.jsonl");
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.line(), 1u);
    EXPECT_NE(std::string(e.what()).find("'action'"), std::string::npos) << e.what();
  }
}

TEST(MotionFile, SchemaErrorsCarryLineNumbers) {
  SyntheticDatasetSpec spec = default_dataset_spec();
  spec.sequences_per_action = 1;
  TempDir dir("schema_lines");
  write_motions(dir / "ok.jsonl", generate_synthetic_dataset(spec));
  std::ifstream in(dir / "ok.jsonl");
  std::string first;
  std::getline(in, first);
  std::ofstream(dir / "bad.jsonl") << first << "\n{\"id\":\"b\",\"action\":-1,\"frames\":[]}\n";
  try {
    read_motions(dir / "bad.jsonl");
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::ofstream(dir / "short.jsonl") << R"({"id":"c","action":0,"frames":[[1,2,3]]})" << "\n";
  EXPECT_THROW(read_motions(dir / "short.jsonl"), SchemaError);
  std::ofstream(dir / "garbage.jsonl") << "not json\n";
  EXPECT_THROW(read_motions(dir / "garbage.jsonl"), SchemaError);
}

TEST(MotionFile, EmptyFileIsEmptyDataset) {
  TempDir dir("empty");
  std::ofstream(dir / "e.jsonl").close();
  EXPECT_TRUE(read_motions(dir / "e.jsonl").empty());
  EXPECT_THROW(read_motions(dir / "does_not_exist.jsonl"), IoError);
}
