#include "sos/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sos/errors.hpp"
#include "sos/ops.hpp"

namespace sos {

std::string to_string(Pathway pathway) { return pathway == Pathway::LowRes ? "lowres" : "highres"; }

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw UsageError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void require_distribution(std::span<const double> dist) {
  if (dist.empty()) throw DomainError("empty distribution");
  double total = 0.0;
  for (double p : dist) {
    if (!std::isfinite(p) || p < 0.0) throw DomainError("distribution has a negative or non-finite entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "distribution sums to " << total;
    throw DomainError(os.str());
  }
}

EpuDecision epu_switch(std::span<const double> dist, double c) {
  require_distribution(dist);
  if (!(c >= 0.0 && c <= 1.0)) throw DomainError("threshold must lie in [0,1]");
  const std::size_t best = argmax(dist);
  EpuDecision decision;
  decision.confidence = dist[best];
  decision.threshold = c;
  if (decision.confidence > c) {
    decision.pathway = Pathway::LowRes;
    decision.predicted_label = best;
  } else {
    decision.pathway = Pathway::HighRes;
  }
  return decision;
}

PatchSelection select_patches(std::span<const double> attention, std::size_t k) {
  if (k < 1 || k > attention.size()) {
    std::ostringstream os;
    os << "select_patches: K = " << k << " must lie in [1, " << attention.size() << "]";
    throw UsageError(os.str());
  }
  std::vector<std::size_t> order(attention.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return attention[a] > attention[b]; });
  PatchSelection selection;
  selection.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  double mass = 0.0;
  for (auto i : selection.indices) mass += attention[i];
  for (auto i : selection.indices) {
    selection.weights.push_back(mass > 0.0 ? attention[i] / mass : 1.0 / static_cast<double>(k));
  }
  return selection;
}

namespace {

Tensor to_tensor(const Image& image) { return image_tensor(image.height, image.width, image.pixels); }

}  // namespace

LrnOutput lrn_forward(const SosModel& model, const Image& lowres) {
  LrnOutput out;
  out.features = extract(model.lowres_extractor, to_tensor(lowres));
  if (model.lowres_head.weight.defined()) {
    out.distribution = classify_lowres(model.lowres_head, out.features);
  }
  return out;
}

HrnOutput hrn_forward(const SosModel& model, const Tensor& v, const PatchSource& patches,
                      const HrnOptions& options) {
  if (!model.has_highres_path()) throw UsageError("hrn_forward: model has no high-res pathway");
  if (patches.count() == 0) throw UsageError("hrn_forward: slide has no patches");
  if (patches.count() != model.attention_head.out_dim()) {
    std::ostringstream os;
    os << "hrn_forward: slide has " << patches.count() << " patches, model expects "
       << model.attention_head.out_dim();
    throw ShapeError(os.str());
  }
  HrnOutput out;
  Tensor attention;
  if (options.pinned) {
    out.selection = *options.pinned;
  } else {
    attention = attention_distribution(model.attention_head, v);
    out.selection = select_patches(attention.data(), model.config.top_k);
  }

  std::vector<Tensor> images;
  for (auto index : out.selection.indices) images.push_back(to_tensor(patches.load(index)));
  auto features = extract_patch_features(model.patch_extractor, images);
  out.extractor_calls = features.size();

  // Scale each feature by its renormalized attention mass so the attention
  // head receives a gradient through the hard selection.
  if (options.pinned) {
    for (std::size_t k = 0; k < features.size(); ++k) {
      features[k] = ops::scale(features[k], out.selection.weights[k]);
    }
  } else {
    std::vector<Tensor> mass;
    for (auto index : out.selection.indices) mass.push_back(ops::pick(attention, index));
    Tensor total = mass[0];
    for (std::size_t k = 1; k < mass.size(); ++k) total = ops::add(total, mass[k]);
    for (std::size_t k = 0; k < features.size(); ++k) {
      features[k] = ops::mul_scalar(features[k], ops::div(mass[k], total));
    }
  }

  Tensor fused;
  const auto mode = model.config.fusion;
  if (model.config.variant == Variant::PatchLevel) {
    if (mode == FusionMode::Gru) {
      fused = gru_final_state(*model.gru, Tensor::zeros({v.size()}), features);
    } else {
      fused = pool_features(mode, features);
    }
  } else if (mode == FusionMode::Gru) {
    fused = gru_fuse(*model.gru, v, features);
  } else {
    fused = fuse_pool(mode, v, features);
  }
  out.distribution = classify_highres(model.fused_head, fused);
  return out;
}

Tensor policy_distribution(const SosModel& model, const Image& lowres) {
  if (!model.policy) throw UsageError("model has no policy network");
  Tensor features = extract(model.policy->extractor, to_tensor(lowres));
  return head_distribution(model.policy->head, features);
}

InferenceResult sos_infer(const SosModel& model, const PreparedSlide& slide, const InferOptions& options) {
  NoGradGuard no_grad;
  const auto start = std::chrono::steady_clock::now();
  InferenceResult result;
  const Variant variant = model.config.variant;

  LrnOutput lrn = lrn_forward(model, slide.lowres);
  const double c = options.forced_threshold.value_or(model.threshold());

  EpuDecision decision;
  decision.threshold = c;
  if (lrn.distribution.defined()) decision.confidence = lrn.distribution[argmax(lrn.distribution.data())];

  switch (variant) {
    case Variant::Sos:
      decision = epu_switch(lrn.distribution.data(), c);
      break;
    case Variant::ImageLevel:
      decision.pathway = Pathway::LowRes;
      decision.predicted_label = argmax(lrn.distribution.data());
      break;
    case Variant::PatchLevel:
    case Variant::MultiScale:
      decision.pathway = Pathway::HighRes;
      break;
    case Variant::Rdms: {
      Tensor pi = policy_distribution(model, slide.lowres);
      if (argmax(pi.data()) == 1) {
        decision.pathway = Pathway::HighRes;
      } else {
        decision.pathway = Pathway::LowRes;
        decision.predicted_label = argmax(lrn.distribution.data());
      }
      break;
    }
  }

  if (decision.pathway == Pathway::HighRes) {
    HrnOutput hrn = hrn_forward(model, lrn.features, *slide.patches);
    decision.predicted_label = argmax(hrn.distribution.data());
    result.chosen_patches = std::move(hrn.selection.indices);
    result.patch_extractor_calls = hrn.extractor_calls;
  }
  result.label = *decision.predicted_label;
  result.decision = decision;
  result.elapsed = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start);
  return result;
}

}  // namespace sos
