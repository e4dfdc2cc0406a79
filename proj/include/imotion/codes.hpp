#pragma once

#include <Eigen/Core>

#include <map>
#include <string>

namespace imotion {

enum class Composition { kConcat, kAdd };

const char* to_string(Composition c);
Composition composition_from_string(const std::string& s);

// Diagonal Gaussian N(mean, diag(exp(log_variance))).
struct VariationalCode {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_variance;

  VariationalCode() = default;
  VariationalCode(std::size_t dim, double init_logvar)
      : mean(Eigen::VectorXd::Zero(dim)), log_variance(Eigen::VectorXd::Constant(dim, init_logvar)) {}

  std::size_t dim() const { return mean.size(); }
};

// Reparameterized draw mean + exp(log_variance / 2) * noise.
Eigen::VectorXd sample_code(const VariationalCode& vc, const Eigen::VectorXd& noise);

// KL(N(mean, diag exp(lv)) || N(0, I)).
double kl_divergence(const VariationalCode& vc);

struct CodeGradient {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_variance;
};

// d KL / d(mean, log_variance).
CodeGradient kl_gradient(const VariationalCode& vc);

// Pulls a gradient on a sample back onto (mean, log_variance) for the noise
// that produced it.
CodeGradient sample_code_backward(const VariationalCode& vc, const Eigen::VectorXd& noise,
                                  const Eigen::VectorXd& grad_sample);

// concat: [alpha; beta]; add: alpha + beta (dims must agree).
Eigen::VectorXd compose_code(const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta, Composition mode);
std::size_t composed_dim(std::size_t alpha_dim, std::size_t beta_dim, Composition mode);

// Splits a gradient on the composed code into alpha and beta parts.
void compose_code_backward(const Eigen::VectorXd& grad_composed, std::size_t alpha_dim, Composition mode,
                           Eigen::VectorXd& grad_alpha, Eigen::VectorXd& grad_beta);

struct CodeBook {
  std::map<std::string, VariationalCode> sequence_codes;  // beta, one per training sequence
  std::map<int, VariationalCode> action_codes;            // alpha, one per action class
  Composition composition = Composition::kConcat;

  std::size_t sequence_dim() const;
  std::size_t action_dim() const;
  std::size_t code_dim() const { return composed_dim(action_dim(), sequence_dim(), composition); }
};

}  // namespace imotion
