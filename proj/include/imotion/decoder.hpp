#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace imotion {

struct TemporalEmbeddingConfig {
  std::size_t dim = 256;
  double base = 10000.0;
};

// Interleaved (sin, cos) pairs of t / base^(2k/dim). Accepts fractional t.
Eigen::VectorXd temporal_embedding(double t, const TemporalEmbeddingConfig& cfg);

using RowMatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMatrixMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Per-time-step MLP: ELU on hidden layers, identity on the output layer.
// Input is [code; temporal embedding]. All parameters live in one flat
// buffer, layer by layer, each layer's weights (row-major fan_out x fan_in)
// followed by its bias.
class MlpDecoder {
 public:
  struct Layer {
    std::size_t fan_in = 0, fan_out = 0;
    std::size_t weight_offset = 0, bias_offset = 0;
  };

  // Activations recorded by forward_batch for backward_batch.
  struct Cache {
    std::vector<Eigen::MatrixXd> pre;  // per layer: W a + b
    std::vector<Eigen::MatrixXd> act;  // act[0] is the input, act[l+1] = f(pre[l])
  };

  MlpDecoder() = default;
  MlpDecoder(std::vector<std::size_t> hidden, std::size_t input_dim, std::size_t output_dim);

  const std::vector<std::size_t>& hidden_sizes() const { return hidden_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  RowMatrixMap weights(std::size_t layer);
  ConstRowMatrixMap weights(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

  // Columns of `inputs` are independent time steps.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs, Cache* cache = nullptr) const;

  // grad_params (if non-empty) is accumulated into; grad_inputs (if non-null)
  // receives d(loss)/d(inputs).
  void backward_batch(const Cache& cache, const Eigen::MatrixXd& grad_outputs,
                      std::span<double> grad_params, Eigen::MatrixXd* grad_inputs) const;

 private:
  std::vector<std::size_t> hidden_;
  std::size_t input_dim_ = 0, output_dim_ = 0;
  std::vector<Layer> layers_;
  std::vector<double> params_;
};

// Closed form sum over layers of fan_in * fan_out + fan_out.
std::size_t decoder_parameter_count(std::span<const std::size_t> hidden, std::size_t input_dim,
                                    std::size_t output_dim);

// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
MlpDecoder build_decoder(std::vector<std::size_t> hidden, std::size_t input_dim,
                         std::size_t output_dim, std::uint64_t seed);

Eigen::VectorXd decoder_forward(const MlpDecoder& dec, const Eigen::VectorXd& code,
                                const Eigen::VectorXd& tau);

struct DecoderGradients {
  std::vector<double> parameters;
  Eigen::VectorXd code;
  Eigen::VectorXd tau;
};

DecoderGradients decoder_backward(const MlpDecoder& dec, const Eigen::VectorXd& code,
                                  const Eigen::VectorXd& tau, const Eigen::VectorXd& output_gradient);

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t size, double lr) : m(size, 0.0), v(size, 0.0), learning_rate(lr) {}
};

// Bias-corrected Adam update in place. Throws ShapeMismatch.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

}  // namespace imotion
