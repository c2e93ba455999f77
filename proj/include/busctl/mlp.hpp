#pragma once

// Small fully connected network (tanh hidden layers, linear output) with a
// hand-written backward pass, and an Adam optimizer over flat parameters.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "busctl/errors.hpp"

namespace busctl {

using Vector = Eigen::VectorXd;

class Mlp {
 public:
  /// Activations of one forward pass, kept for backprop.
  struct Cache {
    std::vector<Vector> activations;  // input, hidden..., output (pre-activation for the last)
  };

  Mlp() = default;

  explicit Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
    if (sizes_.size() < 2) throw ConfigError("mlp: need at least input and output sizes");
    std::size_t count = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      if (sizes_[l] < 1 || sizes_[l + 1] < 1) throw ConfigError("mlp: layer sizes must be positive");
      offsets_.push_back(count);
      count += static_cast<std::size_t>(sizes_[l + 1]) * static_cast<std::size_t>(sizes_[l] + 1);
    }
    params_ = Vector::Zero(static_cast<Eigen::Index>(count));
  }

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::size_t layer_count() const { return sizes_.size() - 1; }
  Eigen::Index parameter_count() const { return params_.size(); }

  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }

  /// Scaled-uniform (Glorot) weights; the last layer is additionally
  /// multiplied by `output_gain`. Biases start at zero.
  void initialize(std::uint64_t seed, double output_gain) {
    std::mt19937_64 rng(seed);
    params_.setZero();
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const double fan = sizes_[l] + sizes_[l + 1];
      double limit = std::sqrt(6.0 / fan);
      if (l + 1 == layer_count()) limit *= output_gain;
      std::uniform_real_distribution<double> u(-limit, limit);
      auto w = weights(l);
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = u(rng);
    }
  }

  Vector forward(const Vector& input) const {
    Vector x = input;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      Vector z = weights(l) * x + bias(l);
      x = (l + 1 == layer_count()) ? z : Vector(z.array().tanh());
    }
    return x;
  }

  Vector forward(const Vector& input, Cache& cache) const {
    cache.activations.clear();
    cache.activations.push_back(input);
    for (std::size_t l = 0; l < layer_count(); ++l) {
      Vector z = weights(l) * cache.activations.back() + bias(l);
      if (l + 1 == layer_count())
        cache.activations.push_back(std::move(z));
      else
        cache.activations.push_back(z.array().tanh());
    }
    return cache.activations.back();
  }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
  void backward(const Cache& cache, const Vector& output_grad, Vector& grad) const {
    if (grad.size() != params_.size()) throw std::logic_error("mlp::backward: gradient shape mismatch");
    Vector delta = output_grad;
    for (std::size_t l = layer_count(); l-- > 0;) {
      const Vector& in = cache.activations[l];
      const auto rows = sizes_[l + 1];
      const auto cols = sizes_[l];
      Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offsets_[l], rows, cols);
      Eigen::Map<Vector> gb(grad.data() + offsets_[l] + static_cast<std::size_t>(rows * cols), rows);
      gw.noalias() += delta * in.transpose();
      gb += delta;
      if (l > 0) {
        Vector back = weights(l).transpose() * delta;
        delta = back.array() * (1.0 - in.array().square());
      }
    }
  }

  Eigen::Map<Eigen::MatrixXd> weights(std::size_t l) {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<const Eigen::MatrixXd> weights(std::size_t l) const {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<Vector> bias(std::size_t l) {
    return {params_.data() + offsets_[l] + static_cast<std::size_t>(sizes_[l + 1] * sizes_[l]), sizes_[l + 1]};
  }
  Eigen::Map<const Vector> bias(std::size_t l) const {
    return {params_.data() + offsets_[l] + static_cast<std::size_t>(sizes_[l + 1] * sizes_[l]), sizes_[l + 1]};
  }

 private:
  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  Vector params_;
};

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(Eigen::Index size, double lr)
      : first_moment(Vector::Zero(size)), second_moment(Vector::Zero(size)), learning_rate(lr) {}
};

/// One bias-corrected Adam descent step: params -= lr * m^ / (sqrt(v^) + eps).
inline void optimizer_step(Vector& params, const Vector& grad, AdamState& state) {
  if (grad.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw std::logic_error("optimizer_step: shape mismatch");
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

}  // namespace busctl
