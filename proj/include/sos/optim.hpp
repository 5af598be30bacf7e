#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sos/tensor.hpp"

namespace sos {

enum class OptimizerKind { Adam, Sgd };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment (or plain gradient descent) updates over a fixed set of
// parameter leaves. step() never clears gradients; call zero_grad().
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerConfig config);

  // Applies one update. If any gradient is non-finite, nothing is changed
  // and NumericError is thrown.
  void step();
  void zero_grad();

  std::uint64_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  OptimizerConfig config_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::uint64_t steps_ = 0;
};

}  // namespace sos
