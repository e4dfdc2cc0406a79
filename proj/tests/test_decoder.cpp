#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "imotion/decoder.hpp"
#include "imotion/error.hpp"
#include "support.hpp"

using namespace imotion;
using imotion::testing::central_difference;
using imotion::testing::random_vector;
using imotion::testing::relative_error;

namespace {

// Straight-line re-implementation reading weights by index from the flat buffer.
Eigen::VectorXd reference_forward(const MlpDecoder& dec, const Eigen::VectorXd& input) {
  std::vector<double> a(input.data(), input.data() + input.size());
  const auto p = dec.parameters();
  const auto& layers = dec.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    std::vector<double> z(L.fan_out);
    for (std::size_t o = 0; o < L.fan_out; ++o) {
      double s = p[L.bias_offset + o];
      for (std::size_t i = 0; i < L.fan_in; ++i) s += p[L.weight_offset + o * L.fan_in + i] * a[i];
      z[o] = (l + 1 < layers.size() && s <= 0.0) ? std::exp(s) - 1.0 : s;
    }
    a = std::move(z);
  }
  return Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
}

}  // namespace

TEST(TemporalEmbedding, ZeroIsAlternatingSinCos) {
  const Eigen::VectorXd e = temporal_embedding(0.0, {});
  ASSERT_EQ(e.size(), 256);
  for (Eigen::Index i = 0; i < e.size(); ++i) EXPECT_EQ(e[i], i % 2 == 0 ? 0.0 : 1.0);
}

TEST(TemporalEmbedding, FourDimsAtOne) {
  const Eigen::VectorXd e = temporal_embedding(1.0, {4, 10000.0});
  EXPECT_NEAR(e[0], std::sin(1.0), 1e-15);
  EXPECT_NEAR(e[1], std::cos(1.0), 1e-15);
  EXPECT_NEAR(e[2], std::sin(1e-2), 1e-15);
  EXPECT_NEAR(e[3], std::cos(1e-2), 1e-15);
}

TEST(TemporalEmbedding, FractionalTimeMatchesDirectFormula) {
  const TemporalEmbeddingConfig cfg{16, 10000.0};
  const Eigen::VectorXd e = temporal_embedding(0.5, cfg);
  for (int k = 0; k < 8; ++k) {
    const double w = 0.5 / std::pow(10000.0, 2.0 * k / 16.0);
    EXPECT_NEAR(e[2 * k], std::sin(w), 1e-15);
    EXPECT_NEAR(e[2 * k + 1], std::cos(w), 1e-15);
  }
}

TEST(TemporalEmbedding, OddDimensionRejected) {
  EXPECT_THROW(temporal_embedding(1.0, {5, 10000.0}), InvalidArgument);
  EXPECT_THROW(temporal_embedding(1.0, {0, 10000.0}), InvalidArgument);
}

TEST(Decoder, PublishedParameterCounts) {
  EXPECT_EQ(build_decoder({1000, 500, 500, 200, 100}, 512, 147, 0).parameter_count(), 1399147u);
  EXPECT_EQ(build_decoder({2000, 2000, 1000, 1000, 200, 100}, 512, 147, 0).parameter_count(), 8265147u);
  EXPECT_EQ(build_decoder({}, 2, 3, 0).parameter_count(), 9u);
}

TEST(Decoder, ParameterCountMatchesEnumeration) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> hidden(rng.uniform_index(5));
    for (auto& h : hidden) h = 1 + rng.uniform_index(20);
    const std::size_t in = 1 + rng.uniform_index(20), out = 1 + rng.uniform_index(20);
    // Brute force: count every (weight, bias) slot one by one.
    std::size_t count = 0, fan_in = in;
    std::vector<std::size_t> widths = hidden;
    widths.push_back(out);
    for (std::size_t w : widths) {
      for (std::size_t o = 0; o < w; ++o) {
        for (std::size_t i = 0; i < fan_in; ++i) ++count;
        ++count;
      }
      fan_in = w;
    }
    EXPECT_EQ(decoder_parameter_count(hidden, in, out), count);
    EXPECT_EQ(MlpDecoder(hidden, in, out).parameter_count(), count);
  }
}

TEST(Decoder, InitWithinFanInBound) {
  const MlpDecoder dec = build_decoder({7, 5}, 4, 3, 99);
  for (std::size_t l = 0; l < dec.layers().size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dec.layers()[l].fan_in));
    EXPECT_LE(dec.weights(l).cwiseAbs().maxCoeff(), bound);
    EXPECT_LE(dec.bias(l).cwiseAbs().maxCoeff(), bound);
  }
  EXPECT_TRUE(std::equal(dec.parameters().begin(), dec.parameters().end(),
                         build_decoder({7, 5}, 4, 3, 99).parameters().begin()));
}

TEST(Decoder, ZeroWeightsGiveZeroOutput) {
  MlpDecoder dec({6, 4}, 5, 3);
  Rng rng(22);
  EXPECT_EQ(decoder_forward(dec, random_vector(rng, 3), random_vector(rng, 2)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Decoder, ForwardMatchesReference) {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const MlpDecoder dec = build_decoder({9, 7, 5}, 6, 4, 100 + trial);
    const Eigen::VectorXd code = random_vector(rng, 4, 2.0), tau = random_vector(rng, 2, 2.0);
    Eigen::VectorXd input(6);
    input << code, tau;
    EXPECT_LT((decoder_forward(dec, code, tau) - reference_forward(dec, input)).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Decoder, ForwardIsDeterministic) {
  const MlpDecoder dec = build_decoder({8}, 4, 3, 5);
  const Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(2, -1, 1), t = Eigen::VectorXd::LinSpaced(2, 0, 2);
  const Eigen::VectorXd a = decoder_forward(dec, c, t), b = decoder_forward(dec, c, t);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * 3), 0);
}

TEST(Decoder, DimensionMismatchThrows) {
  const MlpDecoder dec = build_decoder({8}, 4, 3, 5);
  EXPECT_THROW(decoder_forward(dec, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2)), DimensionMismatch);
  EXPECT_THROW(decoder_backward(dec, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)),
               DimensionMismatch);
}

TEST(Decoder, BatchColumnsAreIndependent) {
  const MlpDecoder dec = build_decoder({10, 6}, 5, 4, 8);
  Rng rng(24);
  Eigen::MatrixXd X(5, 12);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
  const Eigen::MatrixXd Y = dec.forward_batch(X);
  // Reverse column order: each output column must follow its input.
  const Eigen::MatrixXd Yr = dec.forward_batch(X.rowwise().reverse());
  EXPECT_LT((Yr.rowwise().reverse() - Y).cwiseAbs().maxCoeff(), 1e-15);
  for (Eigen::Index t = 0; t < X.cols(); ++t) {
    EXPECT_LT((dec.forward_batch(X.col(t)) - Y.col(t)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Decoder, ZeroOutputGradientGivesZeroGradients) {
  const MlpDecoder dec = build_decoder({6, 5}, 5, 3, 9);
  Rng rng(25);
  const auto g = decoder_backward(dec, random_vector(rng, 3), random_vector(rng, 2), Eigen::VectorXd::Zero(3));
  EXPECT_EQ(*std::max_element(g.parameters.begin(), g.parameters.end()), 0.0);
  EXPECT_EQ(*std::min_element(g.parameters.begin(), g.parameters.end()), 0.0);
  EXPECT_EQ(g.code.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.tau.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Decoder, LinearLayerInputGradientIsWTransposeG) {
  const MlpDecoder dec = build_decoder({}, 5, 3, 10);
  Rng rng(26);
  const Eigen::VectorXd g = random_vector(rng, 3);
  const auto grads = decoder_backward(dec, random_vector(rng, 3), random_vector(rng, 2), g);
  Eigen::VectorXd gin(5);
  gin << grads.code, grads.tau;
  EXPECT_LT((gin - dec.weights(0).transpose() * g).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Decoder, BackwardMatchesFiniteDifferences) {
  Rng rng(27);
  for (int trial = 0; trial < 20; ++trial) {
    MlpDecoder dec = build_decoder({6, 5}, 7, 4, 200 + trial);
    Eigen::VectorXd code = random_vector(rng, 4), tau = random_vector(rng, 3);
    const Eigen::VectorXd gout = random_vector(rng, 4);
    const auto grads = decoder_backward(dec, code, tau, gout);
    auto f = [&] { return decoder_forward(dec, code, tau).dot(gout); };
    auto params = dec.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      EXPECT_LT(relative_error(grads.parameters[i], central_difference(f, params[i])), 1e-5) << "param " << i;
    }
    for (Eigen::Index i = 0; i < code.size(); ++i) {
      EXPECT_LT(relative_error(grads.code[i], central_difference(f, code[i])), 1e-5);
    }
    for (Eigen::Index i = 0; i < tau.size(); ++i) {
      EXPECT_LT(relative_error(grads.tau[i], central_difference(f, tau[i])), 1e-5);
    }
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  AdamState s(3, 0.1);
  std::vector<double> p = {1.0, -2.0, 3.0}, g(3, 0.0);
  adam_step(s, p, g);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepOnSquareMovesByLearningRate) {
  AdamState s(1, 0.1);
  std::vector<double> x = {1.0};
  const std::vector<double> g = {2.0 * x[0]};
  adam_step(s, x, g);
  // m_hat = g, v_hat = g^2: the step is lr * g / (|g| + eps).
  EXPECT_NEAR(x[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
}

TEST(Adam, DescendsSquare) {
  AdamState s(1, 0.1);
  std::vector<double> x = {1.0};
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> g = {2.0 * x[0]};
    adam_step(s, x, g);
  }
  EXPECT_LT(std::abs(x[0]), 0.05);
}

TEST(Adam, ShapeMismatchThrows) {
  AdamState s(2, 0.1);
  std::vector<double> p(3, 0.0), g(3, 0.0);
  EXPECT_THROW(adam_step(s, p, g), ShapeMismatch);
  std::vector<double> p2(2, 0.0);
  EXPECT_THROW(adam_step(s, p2, g), ShapeMismatch);
}
