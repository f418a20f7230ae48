#pragma once

// Latent-score MLP h(x; theta) with hand-written forward and reverse passes.
//
// Parameters live in one flat vector. The flattening order is fixed and
// persisted alongside stored gradient features: layer by layer from the input
// side, each layer's weight matrix row-major as (outputs x inputs), followed
// by its bias. Hidden layers use a rectifier (subgradient 0 at the kink); the
// scalar output layer is linear.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "apohf/domain.hpp"

namespace apohf {

struct TrainConfig {
  int epochs = 1000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double l2_lambda = 0.1;
  std::uint64_t init_seed = 0;

  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(int epoch, const std::string& what)
      : std::runtime_error("epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

inline const std::vector<int>& default_widths() {
  static const std::vector<int> widths{32, 32};
  return widths;
}

class ScoreNet {
 public:
  ScoreNet(Eigen::Index input_dim, std::vector<int> widths, Vector theta);

  // Weights uniform in +-1/sqrt(fan_in), biases zero.
  static ScoreNet init(Eigen::Index input_dim, std::uint64_t seed,
                       std::vector<int> widths = default_widths());

  static Eigen::Index param_count(Eigen::Index input_dim,
                                  const std::vector<int>& widths);

  Eigen::Index input_dim() const { return input_dim_; }
  const std::vector<int>& widths() const { return widths_; }
  Eigen::Index num_params() const { return theta_.size(); }
  const Vector& theta() const { return theta_; }
  void set_theta(Vector theta);

  // Offset of the output layer's bias in theta.
  Eigen::Index output_bias_offset() const { return theta_.size() - 1; }

  double forward(const Eigen::Ref<const Vector>& x) const;
  // One score per row of `inputs`.
  Vector forward_batch(const Matrix& inputs) const;

  // d h(x) / d theta in flat order.
  Vector param_gradient(const Eigen::Ref<const Vector>& x) const;
  // Row i is the parameter gradient at row i of `inputs`.
  Matrix param_gradients(const Matrix& inputs) const;

  nlohmann::json checkpoint() const;
  static ScoreNet from_checkpoint(const nlohmann::json& j);

 private:
  friend class NetTrainer;

  Eigen::Index input_dim_;
  std::vector<int> widths_;
  Vector theta_;
};

// Negative BTL log-likelihood of the comparisons plus l2_lambda * |theta|^2.
double preference_loss(const ScoreNet& net, const TrainingSet& data,
                       double l2_lambda);

// Gradient of preference_loss with respect to theta.
Vector preference_loss_gradient(const ScoreNet& net, const TrainingSet& data,
                                double l2_lambda);

// Runs config.epochs full-batch Adam steps on preference_loss starting from
// `start`. Throws TrainingError when the loss stops being finite.
ScoreNet train(ScoreNet start, const TrainingSet& data, const TrainConfig& config);

// Numerically stable log(sigmoid(z)).
double log_sigmoid(double z);
double sigmoid(double z);

}  // namespace apohf
