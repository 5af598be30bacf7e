#pragma once

#include <cstddef>
#include <span>

#include "sos/tensor.hpp"

namespace sos {

// Per-batch objectives. Distributions are rank-1 probability tensors, one
// per observation; labels index into them. Correctness indicators
// (argmax == label) are treated as constants.

// (1/B) sum_o -log(max(p_o[label_o], 1e-12))
Tensor loss_cross_entropy(std::span<const Tensor> dists, std::span<const std::size_t> labels);

// (1/B) sum_o max(N_s[label] - N_h[label], 0)
Tensor loss_paradoxical(std::span<const Tensor> lowres, std::span<const Tensor> highres,
                        std::span<const std::size_t> labels);

// sum_o [LRN correct] * max(c + epsilon - max(N_s), 0)   (not normalized by B)
Tensor loss_hesitation(std::span<const Tensor> lowres, std::span<const std::size_t> labels,
                       const Tensor& threshold, double epsilon);

// sum_o [HRN correct] [LRN wrong] * max(max(N_s) - c, 0)   (not normalized by B)
Tensor loss_hubristic(std::span<const Tensor> lowres, std::span<const Tensor> highres,
                      std::span<const std::size_t> labels, const Tensor& threshold);

struct LossConfig {
  double lambda_hesitation = 0.5;
  double lambda_hubristic = 1.0;
  double epsilon = 1e-3;
  bool enable_l2 = true;
  bool enable_l3 = true;
};

struct LossBreakdown {
  double l_ce1 = 0.0;
  double l_ce2 = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l_he = 0.0;
  double l_hu = 0.0;
  double l3 = 0.0;
  double l_total = 0.0;
  double lambda_hesitation = 0.0;
  double lambda_hubristic = 0.0;
  double epsilon = 0.0;
  std::size_t batch_size = 0;
  Tensor total;  // differentiable l_total
};

// L1 + L2 + L3 with
//   L1 = L_ce1 + L_ce2,  L3 = (lambda1 L_he + lambda2 L_hu) / B.
// Disabled terms are reported as 0 and left out of the total.
LossBreakdown loss_total(std::span<const Tensor> lowres, std::span<const Tensor> highres,
                         std::span<const std::size_t> labels, const Tensor& threshold,
                         const LossConfig& config);

}  // namespace sos
