#include "imotion/codes.hpp"

#include "imotion/error.hpp"

namespace imotion {

const char* to_string(Composition c) { return c == Composition::kConcat ? "concat" : "add"; }

Composition composition_from_string(const std::string& s) {
  if (s == "concat") return Composition::kConcat;
  if (s == "add") return Composition::kAdd;
  throw InvalidArgument("unknown composition '" + s + "' (expected concat or add)");
}

Eigen::VectorXd sample_code(const VariationalCode& vc, const Eigen::VectorXd& noise) {
  if (noise.size() != vc.mean.size() || vc.log_variance.size() != vc.mean.size()) {
    throw DimensionMismatch("noise dimension " + std::to_string(noise.size()) + " != code dimension " +
                            std::to_string(vc.mean.size()));
  }
  return vc.mean.array() + (0.5 * vc.log_variance.array()).exp() * noise.array();
}

double kl_divergence(const VariationalCode& vc) {
  return 0.5 * (vc.log_variance.array().exp() + vc.mean.array().square() - 1.0 - vc.log_variance.array())
                   .sum();
}

CodeGradient kl_gradient(const VariationalCode& vc) {
  return {vc.mean, 0.5 * (vc.log_variance.array().exp() - 1.0).matrix()};
}

CodeGradient sample_code_backward(const VariationalCode& vc, const Eigen::VectorXd& noise,
                                  const Eigen::VectorXd& grad_sample) {
  const Eigen::ArrayXd sigma = (0.5 * vc.log_variance.array()).exp();
  return {grad_sample, (0.5 * grad_sample.array() * sigma * noise.array()).matrix()};
}

std::size_t composed_dim(std::size_t alpha_dim, std::size_t beta_dim, Composition mode) {
  if (mode == Composition::kConcat) return alpha_dim + beta_dim;
  if (alpha_dim != beta_dim) throw DimensionMismatch("additive composition needs equal code dims");
  return alpha_dim;
}

Eigen::VectorXd compose_code(const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta, Composition mode) {
  if (mode == Composition::kConcat) {
    Eigen::VectorXd out(alpha.size() + beta.size());
    out << alpha, beta;
    return out;
  }
  if (alpha.size() != beta.size()) {
    throw DimensionMismatch("add composition: alpha has " + std::to_string(alpha.size()) +
                            " dims, beta has " + std::to_string(beta.size()));
  }
  return alpha + beta;
}

void compose_code_backward(const Eigen::VectorXd& g, std::size_t alpha_dim, Composition mode,
                           Eigen::VectorXd& grad_alpha, Eigen::VectorXd& grad_beta) {
  const auto a = static_cast<Eigen::Index>(alpha_dim);
  if (mode == Composition::kConcat) {
    grad_alpha = g.head(a);
    grad_beta = g.tail(g.size() - a);
  } else {
    grad_alpha = g;
    grad_beta = g;
  }
}

std::size_t CodeBook::sequence_dim() const {
  return sequence_codes.empty() ? 0 : sequence_codes.begin()->second.dim();
}

std::size_t CodeBook::action_dim() const {
  return action_codes.empty() ? 0 : action_codes.begin()->second.dim();
}

}  // namespace imotion
