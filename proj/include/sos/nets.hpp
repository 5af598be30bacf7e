#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sos/tensor.hpp"

namespace sos {

using Rng = std::mt19937_64;

// Glorot-style uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor init_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct ConvBlock {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  std::size_t stride = 2;
  std::size_t padding = 1;
};

struct ExtractorConfig {
  std::vector<std::size_t> channels{8, 16, 32};  // last entry is the feature width d
  std::size_t kernel = 3;
  std::size_t stride = 2;
};

// A stack of stride-2 conv + relu blocks followed by global average pooling.
// The first block takes a single-channel image.
struct ExtractorParams {
  std::vector<ConvBlock> blocks;

  std::size_t out_width() const;
  std::size_t total_stride() const;
};

ExtractorParams make_extractor(const ExtractorConfig& config, Rng& rng);

// image: [H, W, 1] with H, W multiples of the total stride -> [d]
Tensor extract(const ExtractorParams& params, const Tensor& image);

struct LinearHead {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  std::size_t out_dim() const { return weight.shape()[0]; }
  std::size_t in_dim() const { return weight.shape()[1]; }
};

LinearHead make_head(std::size_t out, std::size_t in, Rng& rng);

// softmax(A v + b) for each of the three heads. The named variants only
// differ in the dimensions they insist on.
Tensor head_distribution(const LinearHead& head, const Tensor& input);
Tensor classify_lowres(const LinearHead& head, const Tensor& v);
Tensor attention_distribution(const LinearHead& head, const Tensor& v);
Tensor classify_highres(const LinearHead& head, const Tensor& fused);

// Extracts each patch in order; throws UsageError on an empty set.
std::vector<Tensor> extract_patch_features(const ExtractorParams& params,
                                           std::span<const Tensor> patches);

struct GruParams {
  Tensor w_z, u_z, w_r, u_r, w_h, u_h;  // [d, d]
  Tensor b_z, b_r, b_h;                 // [d]

  std::size_t width() const { return w_z.shape()[0]; }
};

GruParams make_gru(std::size_t width, Rng& rng);

// Runs the update-gate recurrence from h0 over features in order:
//   z = sigmoid(W_z x + U_z h + b_z), r = sigmoid(W_r x + U_r h + b_r)
//   h~ = tanh(W_h x + U_h (r * h) + b_h), h = (1 - z) * h + z * h~
Tensor gru_final_state(const GruParams& params, const Tensor& h0, std::span<const Tensor> features);

// concat(gru_final_state(params, v, features), v)
Tensor gru_fuse(const GruParams& params, const Tensor& v, std::span<const Tensor> features);

enum class FusionMode { Gru, Average, Max };

FusionMode parse_fusion_mode(const std::string& name);
std::string to_string(FusionMode mode);

// Elementwise mean or max over features.
Tensor pool_features(FusionMode mode, std::span<const Tensor> features);

// concat(pool_features(mode, features), v)
Tensor fuse_pool(FusionMode mode, const Tensor& v, std::span<const Tensor> features);

enum class Variant { ImageLevel, PatchLevel, MultiScale, Rdms, Sos };

Variant parse_variant(const std::string& name);
std::string to_string(Variant variant);

struct ModelConfig {
  Variant variant = Variant::Sos;
  std::size_t num_classes = 4;
  std::size_t num_patches = 64;
  std::size_t top_k = 4;
  ExtractorConfig extractor;
  FusionMode fusion = FusionMode::Gru;

  std::size_t feature_width() const { return extractor.channels.back(); }
};

// Pathway-selection network of the RDMS baseline: its own extractor and a
// two-way head giving pi(a | s), a = 1 meaning "use the high-res pathway".
struct PolicyParams {
  ExtractorParams extractor;
  LinearHead head;  // [2, d]
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Every learnable tensor of one model. Components a variant does not use
// are left undefined and excluded from parameters().
struct SosModel {
  ModelConfig config;
  ExtractorParams lowres_extractor;
  ExtractorParams patch_extractor;
  LinearHead lowres_head;     // [n, d]; absent for PatchLevel and MultiScale
  LinearHead attention_head;  // [P, d]
  LinearHead fused_head;      // [n, 2d], or [n, d] for PatchLevel
  std::optional<GruParams> gru;
  Tensor threshold_logit;  // c = sigmoid(theta)
  std::optional<PolicyParams> policy;

  bool has_highres_path() const { return config.variant != Variant::ImageLevel; }

  // Stable order; the checkpoint format and optimizer rely on it.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  double threshold() const;
};

// Deterministic initialization from seed. theta starts at 0 (c = 0.5).
SosModel make_model(const ModelConfig& config, std::uint64_t seed);

// Converts a row-major single-channel image to the [H, W, 1] layout.
Tensor image_tensor(std::size_t height, std::size_t width, std::span<const double> pixels);

}  // namespace sos
