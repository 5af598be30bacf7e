#include "sos/nets.hpp"

#include <cmath>
#include <sstream>

#include "sos/errors.hpp"
#include "sos/ops.hpp"

namespace sos {

Tensor init_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> values(shape_size(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

std::size_t ExtractorParams::out_width() const { return blocks.back().weight.shape()[0]; }

std::size_t ExtractorParams::total_stride() const {
  std::size_t s = 1;
  for (const auto& b : blocks) s *= b.stride;
  return s;
}

ExtractorParams make_extractor(const ExtractorConfig& config, Rng& rng) {
  if (config.channels.empty()) throw UsageError("extractor needs at least one block");
  ExtractorParams params;
  std::size_t in = 1;
  const std::size_t k = config.kernel;
  for (std::size_t out : config.channels) {
    ConvBlock block;
    block.weight = init_uniform({out, in, k, k}, in * k * k, out * k * k, rng);
    block.bias = Tensor::zeros({out}, true);
    block.stride = config.stride;
    block.padding = k / 2;
    params.blocks.push_back(std::move(block));
    in = out;
  }
  return params;
}

Tensor extract(const ExtractorParams& params, const Tensor& image) {
  if (image.rank() != 3 || image.shape()[2] != 1) {
    throw ShapeError("extract: expected an [H,W,1] image, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.shape()[0], w = image.shape()[1];
  const std::size_t stride = params.total_stride();
  if (h % stride != 0 || w % stride != 0) {
    std::ostringstream os;
    os << "extract: image " << h << "x" << w << " is not a multiple of the total stride " << stride;
    throw ShapeError(os.str());
  }
  // [H,W,1] and [1,H,W] share one memory layout.
  Tensor x = ops::reshape(image, {1, h, w});
  for (const auto& block : params.blocks) {
    x = ops::relu(ops::conv2d(x, block.weight, block.bias, block.stride, block.padding));
  }
  return ops::global_avg_pool(x);
}

LinearHead make_head(std::size_t out, std::size_t in, Rng& rng) {
  return {init_uniform({out, in}, in, out, rng), Tensor::zeros({out}, true)};
}

Tensor head_distribution(const LinearHead& head, const Tensor& input) {
  if (input.rank() != 1 || input.size() != head.in_dim()) {
    std::ostringstream os;
    os << "head expects input of length " << head.in_dim() << ", got " << shape_string(input.shape());
    throw ShapeError(os.str());
  }
  return ops::softmax(ops::affine(head.weight, head.bias, input));
}

Tensor classify_lowres(const LinearHead& head, const Tensor& v) { return head_distribution(head, v); }

Tensor attention_distribution(const LinearHead& head, const Tensor& v) {
  return head_distribution(head, v);
}

Tensor classify_highres(const LinearHead& head, const Tensor& fused) {
  return head_distribution(head, fused);
}

std::vector<Tensor> extract_patch_features(const ExtractorParams& params,
                                           std::span<const Tensor> patches) {
  if (patches.empty()) throw UsageError("extract_patch_features: empty patch set");
  std::vector<Tensor> features;
  features.reserve(patches.size());
  for (const auto& patch : patches) features.push_back(extract(params, patch));
  return features;
}

GruParams make_gru(std::size_t width, Rng& rng) {
  auto mat = [&] { return init_uniform({width, width}, width, width, rng); };
  GruParams p;
  p.w_z = mat();
  p.u_z = mat();
  p.w_r = mat();
  p.u_r = mat();
  p.w_h = mat();
  p.u_h = mat();
  p.b_z = Tensor::zeros({width}, true);
  p.b_r = Tensor::zeros({width}, true);
  p.b_h = Tensor::zeros({width}, true);
  return p;
}

Tensor gru_final_state(const GruParams& params, const Tensor& h0, std::span<const Tensor> features) {
  if (features.empty()) throw UsageError("gru: empty feature sequence");
  const std::size_t d = params.width();
  if (h0.rank() != 1 || h0.size() != d) throw ShapeError("gru: hidden state width mismatch");
  Tensor h = h0;
  for (const auto& x : features) {
    if (x.rank() != 1 || x.size() != d) throw ShapeError("gru: feature width mismatch");
    using namespace ops;
    Tensor z = sigmoid(add(add(matvec(params.w_z, x), matvec(params.u_z, h)), params.b_z));
    Tensor r = sigmoid(add(add(matvec(params.w_r, x), matvec(params.u_r, h)), params.b_r));
    Tensor candidate = tanh(add(add(matvec(params.w_h, x), matvec(params.u_h, mul(r, h))), params.b_h));
    // (1 - z) * h + z * h~  ==  h + z * (h~ - h)
    h = add(h, mul(z, sub(candidate, h)));
  }
  return h;
}

Tensor gru_fuse(const GruParams& params, const Tensor& v, std::span<const Tensor> features) {
  Tensor parts[] = {gru_final_state(params, v, features), v};
  return ops::concat(parts);
}

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "gru") return FusionMode::Gru;
  if (name == "avg") return FusionMode::Average;
  if (name == "max") return FusionMode::Max;
  throw UsageError("unknown fusion mode '" + name + "' (expected gru|avg|max)");
}

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::Gru: return "gru";
    case FusionMode::Average: return "avg";
    case FusionMode::Max: return "max";
  }
  return "?";
}

Tensor pool_features(FusionMode mode, std::span<const Tensor> features) {
  if (features.empty()) throw UsageError("fuse_pool: empty feature set");
  if (mode == FusionMode::Gru) throw UsageError("fuse_pool: use gru_fuse for the recurrent mode");
  Tensor pooled = features[0];
  for (std::size_t k = 1; k < features.size(); ++k) {
    if (features[k].shape() != pooled.shape()) throw ShapeError("fuse_pool: feature width mismatch");
    pooled = mode == FusionMode::Max ? ops::maximum(pooled, features[k]) : ops::add(pooled, features[k]);
  }
  if (mode == FusionMode::Average) pooled = ops::scale(pooled, 1.0 / static_cast<double>(features.size()));
  return pooled;
}

Tensor fuse_pool(FusionMode mode, const Tensor& v, std::span<const Tensor> features) {
  Tensor pooled = pool_features(mode, features);
  if (pooled.shape() != v.shape()) throw ShapeError("fuse_pool: feature width mismatch");
  Tensor parts[] = {pooled, v};
  return ops::concat(parts);
}

Variant parse_variant(const std::string& name) {
  if (name == "image") return Variant::ImageLevel;
  if (name == "patch") return Variant::PatchLevel;
  if (name == "multiscale") return Variant::MultiScale;
  if (name == "rdms") return Variant::Rdms;
  if (name == "sos") return Variant::Sos;
  throw UsageError("unknown variant '" + name + "' (expected sos|image|patch|multiscale|rdms)");
}

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::ImageLevel: return "image";
    case Variant::PatchLevel: return "patch";
    case Variant::MultiScale: return "multiscale";
    case Variant::Rdms: return "rdms";
    case Variant::Sos: return "sos";
  }
  return "?";
}

namespace {

void push_extractor(std::vector<NamedTensor>& out, const std::string& prefix, const ExtractorParams& e) {
  for (std::size_t i = 0; i < e.blocks.size(); ++i) {
    auto base = prefix + ".conv" + std::to_string(i);
    out.push_back({base + ".weight", e.blocks[i].weight});
    out.push_back({base + ".bias", e.blocks[i].bias});
  }
}

void push_head(std::vector<NamedTensor>& out, const std::string& prefix, const LinearHead& head) {
  if (!head.weight.defined()) return;
  out.push_back({prefix + ".weight", head.weight});
  out.push_back({prefix + ".bias", head.bias});
}

}  // namespace

std::vector<NamedTensor> SosModel::named_parameters() const {
  std::vector<NamedTensor> out;
  push_extractor(out, "lowres", lowres_extractor);
  push_head(out, "lowres_head", lowres_head);
  if (has_highres_path()) {
    push_extractor(out, "patch", patch_extractor);
    push_head(out, "attention_head", attention_head);
    if (gru) {
      out.push_back({"gru.w_z", gru->w_z});
      out.push_back({"gru.u_z", gru->u_z});
      out.push_back({"gru.w_r", gru->w_r});
      out.push_back({"gru.u_r", gru->u_r});
      out.push_back({"gru.w_h", gru->w_h});
      out.push_back({"gru.u_h", gru->u_h});
      out.push_back({"gru.b_z", gru->b_z});
      out.push_back({"gru.b_r", gru->b_r});
      out.push_back({"gru.b_h", gru->b_h});
    }
    push_head(out, "fused_head", fused_head);
  }
  if (threshold_logit.defined()) out.push_back({"threshold_logit", threshold_logit});
  if (policy) {
    push_extractor(out, "policy", policy->extractor);
    push_head(out, "policy_head", policy->head);
  }
  return out;
}

std::vector<Tensor> SosModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& named : named_parameters()) out.push_back(named.tensor);
  return out;
}

std::size_t SosModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& named : named_parameters()) total += named.tensor.size();
  return total;
}

double SosModel::threshold() const {
  if (!threshold_logit.defined()) return 1.0;
  const double theta = threshold_logit.item();
  return 1.0 / (1.0 + std::exp(-theta));
}

SosModel make_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.num_classes < 1) throw UsageError("model needs at least one class");
  if (config.top_k < 1 || config.top_k > config.num_patches) {
    throw UsageError("top_k must satisfy 1 <= K <= P");
  }
  Rng rng(seed);
  SosModel model;
  model.config = config;
  const std::size_t d = config.feature_width();
  const std::size_t n = config.num_classes;
  model.lowres_extractor = make_extractor(config.extractor, rng);
  // PatchLevel and MultiScale keep phi_s only for patch selection (and the
  // residual); they have no image-level classifier.
  if (config.variant != Variant::PatchLevel && config.variant != Variant::MultiScale) {
    model.lowres_head = make_head(n, d, rng);
  }
  if (model.has_highres_path()) {
    model.patch_extractor = make_extractor(config.extractor, rng);
    model.attention_head = make_head(config.num_patches, d, rng);
    if (config.fusion == FusionMode::Gru) model.gru = make_gru(d, rng);
    const bool residual = config.variant != Variant::PatchLevel;
    model.fused_head = make_head(n, residual ? 2 * d : d, rng);
  }
  if (config.variant == Variant::Sos) model.threshold_logit = Tensor::scalar(0.0, true);
  if (config.variant == Variant::Rdms) {
    PolicyParams policy;
    policy.extractor = make_extractor(config.extractor, rng);
    policy.head = make_head(2, d, rng);
    model.policy = std::move(policy);
  }
  return model;
}

Tensor image_tensor(std::size_t height, std::size_t width, std::span<const double> pixels) {
  return Tensor::from({height, width, 1}, {pixels.begin(), pixels.end()});
}

}  // namespace sos
