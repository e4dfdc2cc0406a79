#include "imotion/decoder.hpp"

#include <cmath>

#include "imotion/error.hpp"
#include "imotion/rng.hpp"

namespace imotion {

Eigen::VectorXd temporal_embedding(double t, const TemporalEmbeddingConfig& cfg) {
  if (cfg.dim == 0 || cfg.dim % 2 != 0) throw InvalidArgument("embedding dim must be even and positive");
  Eigen::VectorXd out(cfg.dim);
  const double d = static_cast<double>(cfg.dim);
  for (std::size_t k = 0; k < cfg.dim / 2; ++k) {
    const double freq = std::pow(cfg.base, 2.0 * static_cast<double>(k) / d);
    out[2 * k] = std::sin(t / freq);
    out[2 * k + 1] = std::cos(t / freq);
  }
  return out;
}

std::size_t decoder_parameter_count(std::span<const std::size_t> hidden, std::size_t input_dim,
                                    std::size_t output_dim) {
  std::size_t total = 0, fan_in = input_dim;
  for (std::size_t h : hidden) {
    total += fan_in * h + h;
    fan_in = h;
  }
  return total + fan_in * output_dim + output_dim;
}

MlpDecoder::MlpDecoder(std::vector<std::size_t> hidden, std::size_t input_dim, std::size_t output_dim)
    : hidden_(std::move(hidden)), input_dim_(input_dim), output_dim_(output_dim) {
  if (input_dim_ == 0 || output_dim_ == 0) throw InvalidArgument("decoder sizes must be positive");
  std::size_t fan_in = input_dim_, offset = 0;
  auto add = [&](std::size_t fan_out) {
    if (fan_out == 0) throw InvalidArgument("decoder sizes must be positive");
    Layer l{fan_in, fan_out, offset, offset + fan_in * fan_out};
    offset = l.bias_offset + fan_out;
    layers_.push_back(l);
    fan_in = fan_out;
  };
  for (std::size_t h : hidden_) add(h);
  add(output_dim_);
  params_.assign(offset, 0.0);
}

RowMatrixMap MlpDecoder::weights(std::size_t l) {
  const Layer& L = layers_[l];
  return {params_.data() + L.weight_offset, static_cast<Eigen::Index>(L.fan_out),
          static_cast<Eigen::Index>(L.fan_in)};
}

ConstRowMatrixMap MlpDecoder::weights(std::size_t l) const {
  const Layer& L = layers_[l];
  return {params_.data() + L.weight_offset, static_cast<Eigen::Index>(L.fan_out),
          static_cast<Eigen::Index>(L.fan_in)};
}

Eigen::Map<Eigen::VectorXd> MlpDecoder::bias(std::size_t l) {
  const Layer& L = layers_[l];
  return {params_.data() + L.bias_offset, static_cast<Eigen::Index>(L.fan_out)};
}

Eigen::Map<const Eigen::VectorXd> MlpDecoder::bias(std::size_t l) const {
  const Layer& L = layers_[l];
  return {params_.data() + L.bias_offset, static_cast<Eigen::Index>(L.fan_out)};
}

Eigen::MatrixXd MlpDecoder::forward_batch(const Eigen::MatrixXd& inputs, Cache* cache) const {
  if (static_cast<std::size_t>(inputs.rows()) != input_dim_) {
    throw DimensionMismatch("decoder input has " + std::to_string(inputs.rows()) + " rows, expected " +
                            std::to_string(input_dim_));
  }
  if (cache) {
    cache->pre.resize(layers_.size());
    cache->act.resize(layers_.size() + 1);
    cache->act[0] = inputs;
  }
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = weights(l) * a;
    z.colwise() += bias(l);
    const bool hidden = l + 1 < layers_.size();
    if (hidden) {
      a = z.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
    } else {
      a = z;
    }
    if (cache) {
      cache->pre[l] = std::move(z);
      cache->act[l + 1] = a;
    }
  }
  return a;
}

void MlpDecoder::backward_batch(const Cache& cache, const Eigen::MatrixXd& grad_outputs,
                                std::span<double> grad_params, Eigen::MatrixXd* grad_inputs) const {
  if (static_cast<std::size_t>(grad_outputs.rows()) != output_dim_ ||
      grad_outputs.cols() != cache.act[0].cols()) {
    throw DimensionMismatch("output gradient shape differs from forward pass");
  }
  if (!grad_params.empty() && grad_params.size() != params_.size()) {
    throw DimensionMismatch("parameter gradient buffer has wrong size");
  }
  Eigen::MatrixXd delta = grad_outputs;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) {
      // ELU'(z) = 1 for z > 0, exp(z) = act + 1 otherwise.
      const Eigen::MatrixXd& z = cache.pre[l];
      const Eigen::MatrixXd& y = cache.act[l + 1];
      delta = delta.array() * (z.array() > 0.0).select(1.0, y.array() + 1.0);
    }
    if (!grad_params.empty()) {
      const Layer& L = layers_[l];
      RowMatrixMap gw(grad_params.data() + L.weight_offset, static_cast<Eigen::Index>(L.fan_out),
                      static_cast<Eigen::Index>(L.fan_in));
      Eigen::Map<Eigen::VectorXd> gb(grad_params.data() + L.bias_offset,
                                     static_cast<Eigen::Index>(L.fan_out));
      gw.noalias() += delta * cache.act[l].transpose();
      gb += delta.rowwise().sum();
    }
    if (l > 0 || grad_inputs) {
      Eigen::MatrixXd next = weights(l).transpose() * delta;
      if (l == 0) {
        *grad_inputs = std::move(next);
      } else {
        delta = std::move(next);
      }
    }
  }
}

MlpDecoder build_decoder(std::vector<std::size_t> hidden, std::size_t input_dim, std::size_t output_dim,
                         std::uint64_t seed) {
  MlpDecoder dec(std::move(hidden), input_dim, output_dim);
  Rng rng(seed);
  auto params = dec.parameters();
  for (const auto& L : dec.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(L.fan_in));
    for (std::size_t i = L.weight_offset; i < L.bias_offset + L.fan_out; ++i) {
      params[i] = (2.0 * rng.uniform() - 1.0) * bound;
    }
  }
  return dec;
}

namespace {

Eigen::MatrixXd stack_input(const MlpDecoder& dec, const Eigen::VectorXd& code, const Eigen::VectorXd& tau) {
  if (static_cast<std::size_t>(code.size() + tau.size()) != dec.input_dim()) {
    throw DimensionMismatch("code (" + std::to_string(code.size()) + ") + embedding (" +
                            std::to_string(tau.size()) + ") != decoder input " +
                            std::to_string(dec.input_dim()));
  }
  Eigen::MatrixXd x(dec.input_dim(), 1);
  x.col(0) << code, tau;
  return x;
}

}  // namespace

Eigen::VectorXd decoder_forward(const MlpDecoder& dec, const Eigen::VectorXd& code,
                                const Eigen::VectorXd& tau) {
  return dec.forward_batch(stack_input(dec, code, tau)).col(0);
}

DecoderGradients decoder_backward(const MlpDecoder& dec, const Eigen::VectorXd& code,
                                  const Eigen::VectorXd& tau, const Eigen::VectorXd& output_gradient) {
  if (static_cast<std::size_t>(output_gradient.size()) != dec.output_dim()) {
    throw DimensionMismatch("output gradient has wrong size");
  }
  MlpDecoder::Cache cache;
  dec.forward_batch(stack_input(dec, code, tau), &cache);
  DecoderGradients g;
  g.parameters.assign(dec.parameter_count(), 0.0);
  Eigen::MatrixXd gin;
  dec.backward_batch(cache, output_gradient, g.parameters, &gin);
  g.code = gin.col(0).head(code.size());
  g.tau = gin.col(0).tail(tau.size());
  return g;
}

void adam_step(AdamState& s, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw ShapeMismatch("Adam state, parameters and gradients must have equal sizes");
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
    const double mh = s.m[i] / c1;
    const double vh = s.v[i] / c2;
    params[i] -= s.learning_rate * mh / (std::sqrt(vh) + s.eps);
  }
}

}  // namespace imotion
