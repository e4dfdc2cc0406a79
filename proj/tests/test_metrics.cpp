#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "imotion/error.hpp"
#include "imotion/metrics.hpp"
#include "imotion/tensor_io.hpp"
#include "support.hpp"

using namespace imotion;
using imotion::testing::central_difference;
using imotion::testing::random_vector;
using imotion::testing::relative_error;
using imotion::testing::TempDir;

namespace {

// Frame t of the sequence holds the value t in every coordinate.
MotionSequence counting_sequence(int T, int dim = 3) {
  MotionSequence s{"count", 0, {}};
  for (int t = 0; t < T; ++t) s.poses.emplace_back(Eigen::VectorXd::Constant(dim, t));
  return s;
}

MotionSequence random_sequence(Rng& rng, int T, int dim, int action = 0) {
  MotionSequence s{"r", action, {}};
  for (int t = 0; t < T; ++t) s.poses.emplace_back(random_vector(rng, dim));
  return s;
}

FeatureExtractor random_extractor(std::uint64_t seed, std::size_t in = 5, std::size_t hidden = 4,
                                  std::size_t classes = 3) {
  FeatureExtractor fx(in, hidden, classes);
  Rng rng(seed);
  for (double& p : fx.parameters()) p = 0.5 * rng.normal();
  return fx;
}

// Scalar GRU reading the flat column-major parameter blocks directly.
std::vector<double> oracle_gru(const FeatureExtractor& fx, const std::vector<std::vector<double>>& frames) {
  const std::size_t I = fx.input_dim(), H = fx.hidden_dim();
  const auto p = fx.parameters();
  auto wx = [&](std::size_t r, std::size_t c) { return p[c * 3 * H + r]; };
  auto uh = [&](std::size_t r, std::size_t c) { return p[3 * H * I + c * 3 * H + r]; };
  auto b = [&](std::size_t r) { return p[3 * H * I + 3 * H * H + r]; };
  auto sig = [](double a) { return 1.0 / (1.0 + std::exp(-a)); };
  std::vector<double> h(H, 0.0);
  for (const auto& raw : frames) {
    std::vector<double> x(I);
    for (std::size_t i = 0; i < I; ++i) x[i] = (raw[i] - fx.input_mean()[static_cast<Eigen::Index>(i)]) /
                                               fx.input_scale()[static_cast<Eigen::Index>(i)];
    std::vector<double> z(H), r(H), n(H);
    for (std::size_t j = 0; j < H; ++j) {
      double az = b(j), ar = b(H + j);
      for (std::size_t i = 0; i < I; ++i) {
        az += wx(j, i) * x[i];
        ar += wx(H + j, i) * x[i];
      }
      for (std::size_t k = 0; k < H; ++k) {
        az += uh(j, k) * h[k];
        ar += uh(H + j, k) * h[k];
      }
      z[j] = sig(az);
      r[j] = sig(ar);
    }
    for (std::size_t j = 0; j < H; ++j) {
      double an = b(2 * H + j);
      for (std::size_t i = 0; i < I; ++i) an += wx(2 * H + j, i) * x[i];
      for (std::size_t k = 0; k < H; ++k) an += uh(2 * H + j, k) * r[k] * h[k];
      n[j] = std::tanh(an);
    }
    for (std::size_t j = 0; j < H; ++j) h[j] = (1.0 - z[j]) * n[j] + z[j] * h[j];
  }
  return h;
}

// Brute-force expectation of a paired distance with uniform independent
// marginals: the mean over all ordered pairs, self-pairs included.
double pair_expectation(const Eigen::MatrixXd& f) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index j = 0; j < f.rows(); ++j) s += (f.row(i) - f.row(j)).norm();
  }
  return s / static_cast<double>(f.rows() * f.rows());
}

MotionDataset tiny_motion_set(int per_action, int max_len, std::uint64_t seed = 5) {
  SyntheticDatasetSpec spec = default_dataset_spec();
  spec.actions.resize(3);
  spec.sequences_per_action = per_action;
  spec.seed = seed;
  for (auto& a : spec.actions) {
    a.max_length = std::min(a.max_length, max_len);
    a.min_length = std::min(a.min_length, a.max_length);
  }
  return generate_synthetic_dataset(spec);
}

ExtractorTrainConfig quick_extractor() {
  ExtractorTrainConfig c;
  c.hidden = 12;
  c.epochs = 15;
  c.batch_size = 8;
  c.target_len = 30;
  c.learning_rate = 1e-2;
  return c;
}

// One trained classifier shared by the slower tests.
struct Trained {
  MotionDataset data = tiny_motion_set(10, 60);
  ExtractorTrainLog log;
  FeatureExtractor fx = train_feature_extractor(data, quick_extractor(), &log);
};

const Trained& trained() {
  static const Trained t;
  return t;
}

}  // namespace

TEST(AdjustLength, PadsWithLastPose) {
  Rng rng(80);
  const MotionSequence out = adjust_length(counting_sequence(3), 5, rng);
  ASSERT_EQ(out.length(), 5u);
  const double expected[] = {0, 1, 2, 2, 2};
  for (int t = 0; t < 5; ++t) EXPECT_EQ(out.poses[static_cast<std::size_t>(t)].values[0], expected[t]);
}

TEST(AdjustLength, IdentityAtTarget) {
  Rng rng(81);
  const MotionSequence in = counting_sequence(5);
  const MotionSequence out = adjust_length(in, 5, rng);
  for (int t = 0; t < 5; ++t) EXPECT_EQ(out.poses[static_cast<std::size_t>(t)].values, in.poses[static_cast<std::size_t>(t)].values);
  EXPECT_THROW(adjust_length(in, 0, rng), InvalidArgument);
}

TEST(AdjustLength, WindowStartIsUniform) {
  Rng rng(82);
  const MotionSequence in = counting_sequence(10);
  std::vector<int> counts(6, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const MotionSequence w = adjust_length(in, 5, rng);
    const int start = static_cast<int>(w.poses[0].values[0]);
    ASSERT_GE(start, 0);
    ASSERT_LE(start, 5);
    for (int t = 0; t < 5; ++t) ASSERT_EQ(w.poses[static_cast<std::size_t>(t)].values[0], start + t);
    ++counts[static_cast<std::size_t>(start)];
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 6.0) * (c - n / 6.0) / (n / 6.0);
  EXPECT_LT(chi2, 15.086);  // chi-square, 5 dof, alpha = 0.01
}

TEST(Features, MatchIndependentGru) {
  FeatureExtractor fx = random_extractor(83);
  fx.input_mean() << 0.1, -0.2, 0.3, 0.0, 0.5;
  fx.input_scale() << 1.0, 2.0, 0.5, 1.5, 1.0;
  Rng rng(84);
  const MotionSequence seq = random_sequence(rng, 7, 5);
  std::vector<std::vector<double>> frames;
  for (const auto& p : seq.poses) frames.emplace_back(p.values.data(), p.values.data() + 5);
  const auto expected = oracle_gru(fx, frames);
  const Eigen::VectorXd got = fx.features(seq);
  for (std::size_t j = 0; j < expected.size(); ++j) EXPECT_NEAR(got[static_cast<Eigen::Index>(j)], expected[j], 1e-13);
}

TEST(Features, AllZeroMotionMatchesOracle) {
  const FeatureExtractor fx = random_extractor(85);
  const std::vector<std::vector<double>> zeros(60, std::vector<double>(5, 0.0));
  const auto expected = oracle_gru(fx, zeros);
  MotionSequence seq{"z", 0, std::vector<Pose>(60, Pose(Eigen::VectorXd::Zero(5)))};
  Rng rng(86);
  const Eigen::MatrixXd f = extract_features(std::span(&seq, 1), fx, 60, rng);
  for (std::size_t j = 0; j < expected.size(); ++j) EXPECT_NEAR(f(0, static_cast<Eigen::Index>(j)), expected[j], 1e-13);
}

TEST(Features, IdenticalInputsAndPermutedRows) {
  const FeatureExtractor fx = random_extractor(87);
  Rng rng(88);
  std::vector<MotionSequence> seqs;
  for (int i = 0; i < 6; ++i) seqs.push_back(random_sequence(rng, 3 + i, 5));
  const Eigen::MatrixXd a = extract_features(seqs, fx, 20, rng);
  const Eigen::MatrixXd b = extract_features(seqs, fx, 20, rng);
  EXPECT_EQ(a, b);
  std::vector<MotionSequence> permuted = {seqs[3], seqs[0], seqs[5], seqs[1], seqs[4], seqs[2]};
  const Eigen::MatrixXd p = extract_features(permuted, fx, 20, rng);
  const int order[] = {3, 0, 5, 1, 4, 2};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(p.row(i), a.row(order[i]));
  EXPECT_THROW(fx.features(Eigen::MatrixXd::Zero(4, 3)), DimensionMismatch);
}

TEST(Features, GradientMatchesFiniteDifferences) {
  FeatureExtractor fx = random_extractor(89, 3, 4, 3);
  fx.input_scale() << 1.0, 0.5, 2.0;
  Rng rng(90);
  std::vector<Eigen::MatrixXd> batch;
  for (int b = 0; b < 3; ++b) {
    Eigen::MatrixXd f(3, 5);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
    batch.push_back(f);
  }
  const std::vector<int> labels = {0, 2, 1};
  std::vector<double> grad(fx.parameters().size(), 0.0);
  fx.loss_and_gradient(batch, labels, grad);
  std::vector<double> scratch(grad.size());
  auto params = fx.parameters();
  auto f = [&] { return fx.loss_and_gradient(batch, labels, scratch); };
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_LT(relative_error(grad[i], central_difference(f, params[i])), 1e-5) << "param " << i;
  }
}

TEST(Fid, SymmetricAndZeroOnSelf) {
  Rng rng(91);
  Eigen::MatrixXd a(50, 4), b(60, 4);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = 2.0 * rng.normal() + 0.5;
  EXPECT_NEAR(fid(a, b).value, fid(b, a).value, 1e-6);
  EXPECT_LE(std::abs(fid(a, a).value), 1e-8);
  EXPECT_GT(fid(a, b).value, 0.0);
  EXPECT_FALSE(fid(a, b).degenerate_covariance);
}

TEST(Fid, OneDimensionalClosedForms) {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1), one = Eigen::VectorXd::Ones(1);
  const Eigen::MatrixXd var1 = Eigen::MatrixXd::Ones(1, 1), var4 = Eigen::MatrixXd::Constant(1, 1, 4.0);
  EXPECT_NEAR(fid_from_moments(zero, var1, zero, var1).value, 0.0, 1e-6);
  EXPECT_NEAR(fid_from_moments(zero, var1, one, var1).value, 1.0, 1e-6);
  EXPECT_NEAR(fid_from_moments(zero, var1, zero, var4).value, 1.0, 1e-6);
}

TEST(Fid, MatchesDiagonalClosedForm) {
  Eigen::VectorXd ma(3), mb(3);
  ma << 0, 1, 2;
  mb << 1, 1, 0;
  const Eigen::Vector3d va(1, 4, 9), vb(4, 1, 1);
  double expected = (ma - mb).squaredNorm();
  for (int i = 0; i < 3; ++i) expected += va[i] + vb[i] - 2.0 * std::sqrt(va[i] * vb[i]);
  EXPECT_NEAR(fid_from_moments(ma, va.asDiagonal(), mb, vb.asDiagonal()).value, expected, 1e-10);
}

TEST(Fid, RankDeficientCovarianceIsFlagged) {
  Rng rng(92);
  Eigen::MatrixXd few(3, 5), many(40, 5);
  for (Eigen::Index i = 0; i < few.size(); ++i) few.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < many.size(); ++i) many.data()[i] = rng.normal();
  const FidResult r = fid(few, many);
  EXPECT_TRUE(r.degenerate_covariance);
  EXPECT_TRUE(std::isfinite(r.value));
}

TEST(Diversity, IdenticalFeaturesGiveZero) {
  Rng rng(93);
  const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(30, 4, 1.5);
  EXPECT_EQ(diversity(same, 200, rng), 0.0);
  EXPECT_EQ(diversity(same, 10, rng), 0.0);
  EXPECT_THROW(diversity(Eigen::MatrixXd::Zero(1, 4), 10, rng), InsufficientData);
}

TEST(Diversity, TwoClustersMatchBruteForceExpectation) {
  const double D = 3.0;
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(10, 2);
  f.bottomRows(5).col(0).setConstant(D);
  const double expected = pair_expectation(f);
  EXPECT_DOUBLE_EQ(expected, D / 2.0);
  for (int subset : {4, 10, 25}) {
    Rng rng(94 + static_cast<std::uint64_t>(subset));
    const int runs = 4000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < runs; ++i) {
      const double v = diversity(f, subset, rng);
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / runs, se = std::sqrt((sum2 / runs - mean * mean) / runs);
    EXPECT_LT(std::abs(mean - expected), 4.0 * se + 1e-12) << "subset " << subset;
  }
}

TEST(Diversity, ScalesLinearly) {
  Rng data_rng(95);
  Eigen::MatrixXd f(40, 3);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = data_rng.normal();
  Rng a(96), b(96);
  EXPECT_NEAR(diversity(2.0 * f, 20, b), 2.0 * diversity(f, 20, a), 1e-12);
}

TEST(Multimodality, ZeroWhenEachActionIsConstant) {
  Eigen::MatrixXd f(6, 2);
  f << 0, 0, 0, 0, 5, 5, 5, 5, 9, 1, 9, 1;
  const std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  Rng rng(97);
  EXPECT_EQ(multimodality(f, labels, 20, rng), 0.0);
  EXPECT_GT(diversity(f, 20, rng), 0.0);
}

TEST(Multimodality, SingleActionEqualsDiversity) {
  Rng data_rng(98);
  Eigen::MatrixXd f(30, 3);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = data_rng.normal();
  const std::vector<int> labels(30, 4);
  Rng a(99), b(99);
  EXPECT_DOUBLE_EQ(multimodality(f, labels, 20, a), diversity(f, 20, b));
}

TEST(Multimodality, ScalesLinearly) {
  Rng data_rng(100);
  Eigen::MatrixXd f(30, 3);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = data_rng.normal();
  std::vector<int> labels(30);
  for (int i = 0; i < 30; ++i) labels[static_cast<std::size_t>(i)] = i % 3;
  Rng a(101), b(101);
  EXPECT_NEAR(multimodality(3.0 * f, labels, 20, b), 3.0 * multimodality(f, labels, 20, a), 1e-12);
}

TEST(Mms, Examples) {
  Eigen::MatrixXd gen(1, 1), train(2, 1);
  gen << 0.5;
  train << 0.0, 2.0;
  EXPECT_DOUBLE_EQ(mms(gen, train), 0.5);

  Eigen::MatrixXd grid(9, 2);
  for (int i = 0; i < 9; ++i) grid.row(i) << 10.0 * (i % 3), 10.0 * (i / 3);
  EXPECT_EQ(mms(grid, grid), 0.0);
  EXPECT_EQ(mms(grid.topRows(4), grid), 0.0);
  const Eigen::RowVector2d delta(0.3, -0.4);
  EXPECT_NEAR(mms(grid.rowwise() + delta, grid), 0.5, 1e-12);
}

TEST(MmsBaseline, ZeroWithoutCroppingAndPositiveWithIt) {
  const FeatureExtractor fx = random_extractor(102);
  Rng rng(103);
  std::vector<MotionSequence> short_only, mixed;
  for (int i = 0; i < 8; ++i) short_only.push_back(random_sequence(rng, 5 + i, 5));
  mixed = short_only;
  for (int i = 0; i < 4; ++i) mixed.push_back(random_sequence(rng, 40 + i, 5));
  EXPECT_EQ(mms_baseline(short_only, fx, 20, rng), 0.0);
  EXPECT_GT(mms_baseline(mixed, fx, 20, rng), 0.0);
  Rng a(104), b(104);
  EXPECT_EQ(mms_baseline(mixed, fx, 20, a), mms_baseline(mixed, fx, 20, b));
}

TEST(Welch, KnownValue) {
  const std::vector<double> a = {1, 2, 3, 4, 5}, b = {2, 4, 6, 8, 10};
  const WelchResult r = welch_t_test(a, b);
  EXPECT_NEAR(r.t, -1.8973665961010275, 1e-12);
  EXPECT_NEAR(r.df, 5.882352941176471, 1e-12);
  EXPECT_NEAR(r.p_value, 0.10753119493062718, 1e-9);
  const WelchResult s = welch_t_test(b, a);
  EXPECT_NEAR(s.t, -r.t, 1e-15);
  EXPECT_NEAR(s.p_value, r.p_value, 1e-15);
  const std::vector<double> one = {1.0};
  EXPECT_THROW(welch_t_test(one, a), InsufficientData);
}

TEST(Welch, ConstantSamples) {
  const std::vector<double> a = {2, 2, 2}, b = {2, 2, 2, 2}, c = {3, 3, 3};
  EXPECT_EQ(welch_t_test(a, b).p_value, 1.0);
  EXPECT_EQ(welch_t_test(a, c).p_value, 0.0);
}

TEST(Extractor, TrainingSeparatesSyntheticClasses) {
  const Trained& t = trained();
  ASSERT_EQ(t.log.loss.size(), 15u);
  EXPECT_LT(t.log.loss.back(), t.log.loss.front());
  Rng rng(105);
  std::vector<int> labels;
  for (const auto& s : t.data.sequences) labels.push_back(s.action);
  const double acc = accuracy(t.data.sequences, labels, t.fx, 30, rng);
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
  // An adversarial relabeling cannot beat the true labels.
  for (int shift = 1; shift < 3; ++shift) {
    std::vector<int> wrong = labels;
    for (int& z : wrong) z = (z + shift) % 3;
    Rng a(106), b(106);
    EXPECT_LE(accuracy(t.data.sequences, wrong, t.fx, 30, a), accuracy(t.data.sequences, labels, t.fx, 30, b));
  }
}

TEST(Extractor, EmptyDatasetThrows) { EXPECT_THROW(train_feature_extractor(MotionDataset{}, {}), EmptyDataset); }

TEST(Extractor, SaveLoadPreservesDigestAndOutputs) {
  const Trained& t = trained();
  TempDir dir("fx");
  save_feature_extractor(dir / "fx.bin", t.fx);
  const FeatureExtractor back = load_feature_extractor(dir / "fx.bin");
  EXPECT_EQ(back.digest(), t.fx.digest());
  EXPECT_EQ(back.features(t.data.sequences[0]), t.fx.features(t.data.sequences[0]));

  TensorFile file = read_tensor_file(dir / "fx.bin");
  for (auto& tensor : file.tensors) {
    if (tensor.name == "params") tensor.data[0] += 1e-9;
  }
  write_tensor_file(dir / "tampered.bin", file);
  EXPECT_THROW(load_feature_extractor(dir / "tampered.bin"), FormatVersionMismatch);
}

TEST(Extractor, TrainingIsDeterministic) {
  const MotionDataset data = tiny_motion_set(4, 30);
  ExtractorTrainConfig c = quick_extractor();
  c.epochs = 3;
  EXPECT_EQ(train_feature_extractor(data, c).digest(), train_feature_extractor(data, c).digest());
}

TEST(Summarize, HalfWidth) {
  const MetricRow one = summarize("x", {3.0});
  EXPECT_EQ(one.half_width, 0.0);
  EXPECT_EQ(one.mean, 3.0);
  const MetricRow r = summarize("y", {1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(r.mean, 2.5);
  EXPECT_NEAR(r.half_width, 1.96 * std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
  EXPECT_EQ(r.repeats, 4);
}

TEST(Evaluate, SingleRepeatHasZeroHalfWidths) {
  const Trained& t = trained();
  EvalOptions o;
  o.repeats = 1;
  o.target_len = 30;
  o.generated_count = 12;
  o.seed = 3;
  const MetricsReport rep = evaluate(replay_generator(t.data), t.data, t.fx, o);
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.half_width, 0.0) << row.name;
    EXPECT_EQ(row.repeats, 1);
  }
  EXPECT_EQ(rep.extractor_digest, t.fx.digest());
  EXPECT_EQ(rep.generated_per_repeat, 12);
}

TEST(Evaluate, ReportInvariantsAndDeterminism) {
  const Trained& t = trained();
  EvalOptions o;
  o.repeats = 3;
  o.target_len = 30;
  o.generated_count = 15;
  o.seed = 4;
  const MetricsReport a = evaluate(replay_generator(t.data), t.data, t.fx, o);
  o.threads = 2;
  const MetricsReport b = evaluate(replay_generator(t.data), t.data, t.fx, o);
  EXPECT_EQ(to_json(a, false).dump(), to_json(b, false).dump());
  for (const char* name : {"fid", "accuracy", "diversity", "multimodality", "mms", "mms_baseline"}) {
    const MetricRow& row = a.row(name);
    EXPECT_GE(row.half_width, 0.0) << name;
    EXPECT_EQ(row.values.size(), 3u);
  }
  EXPECT_GE(a.row("accuracy").mean, 0.0);
  EXPECT_LE(a.row("accuracy").mean, 1.0);
  EXPECT_GE(a.row("mms").mean, 0.0);
  EXPECT_THROW(a.row("nope"), InvalidArgument);
  const auto j = to_json(a, false);
  EXPECT_FALSE(j.contains("generated_at"));
  EXPECT_TRUE(to_json(a, true).contains("generated_at"));
}

TEST(Evaluate, ConstantGeneratorGivesIdenticalRepeats) {
  const Trained& t = trained();
  // Every draw is the same short motion, so nothing downstream is random
  // apart from the real-data rows.
  const MotionSequence fixed = t.data.sequences[0];
  MotionGenerator gen = [&](int action, int, Rng&) {
    MotionSequence s = fixed;
    s.action = action;
    return s;
  };
  EvalOptions o;
  o.repeats = 3;
  o.target_len = 60;
  o.generated_count = 10;
  const MetricsReport rep = evaluate(gen, t.data, t.fx, o);
  EXPECT_EQ(rep.row("diversity").mean, 0.0);
  EXPECT_EQ(rep.row("diversity").half_width, 0.0);
  EXPECT_EQ(rep.row("multimodality").half_width, 0.0);
}
