#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sos/nets.hpp"
#include "sos/slide.hpp"
#include "sos/tensor.hpp"

namespace sos {

enum class Pathway { LowRes, HighRes };

std::string to_string(Pathway pathway);

struct EpuDecision {
  Pathway pathway = Pathway::HighRes;
  double confidence = 0.0;  // max of the low-res distribution
  double threshold = 0.0;   // c at decision time
  // Set by the gate for LowRes; filled from the HRN for HighRes.
  std::optional<std::size_t> predicted_label;
};

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// Validates a probability vector (finite, non-negative, sums to 1 within
// 1e-9); throws DomainError otherwise.
void require_distribution(std::span<const double> dist);

// LowRes with q = argmax(dist) iff max(dist) > c (strict), else HighRes.
// c must lie in [0,1].
EpuDecision epu_switch(std::span<const double> dist, double c);

struct PatchSelection {
  std::vector<std::size_t> indices;  // descending probability, ties by index
  std::vector<double> weights;       // renormalized attention mass, sums to 1
};

// Top-K patch indices of the attention distribution. UsageError unless
// 1 <= K <= P.
PatchSelection select_patches(std::span<const double> attention, std::size_t k);

struct LrnOutput {
  Tensor features;      // v
  Tensor distribution;  // N_s (undefined for variants without a low-res head)
};

LrnOutput lrn_forward(const SosModel& model, const Image& lowres);

struct HrnOptions {
  // Overrides the attention-driven choice (indices and constant weights).
  std::optional<PatchSelection> pinned;
};

struct HrnOutput {
  Tensor distribution;  // N_h
  PatchSelection selection;
  std::size_t extractor_calls = 0;
};

// Attention -> top-K selection -> patch features (scaled by their
// renormalized attention mass) -> fusion -> high-res head. PatchLevel
// models fuse from a zero state and drop the residual v.
HrnOutput hrn_forward(const SosModel& model, const Tensor& v, const PatchSource& patches,
                      const HrnOptions& options = {});

struct InferOptions {
  // Replaces c for gated models (1.0 forces the high-res pathway).
  std::optional<double> forced_threshold;
};

struct InferenceResult {
  std::size_t label = 0;
  EpuDecision decision;
  std::vector<std::size_t> chosen_patches;
  std::size_t patch_extractor_calls = 0;
  std::chrono::nanoseconds elapsed{0};
};

// Runs one slide through a model without recording gradients. SOS uses the
// confidence gate; RDMS follows its policy's argmax action; ImageLevel is
// always LowRes; PatchLevel and MultiScale are always HighRes. Patch data is
// only touched on the HighRes path.
InferenceResult sos_infer(const SosModel& model, const PreparedSlide& slide,
                          const InferOptions& options = {});

// pi(a | s) of the RDMS policy network.
Tensor policy_distribution(const SosModel& model, const Image& lowres);

}  // namespace sos
