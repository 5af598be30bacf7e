#include "sos/losses.hpp"

#include <sstream>

#include "sos/errors.hpp"
#include "sos/ops.hpp"
#include "sos/protocol.hpp"

namespace sos {

namespace {

constexpr double kLogFloor = 1e-12;

void check_batch(std::span<const Tensor> dists, std::span<const std::size_t> labels) {
  if (dists.empty()) throw UsageError("loss: empty batch");
  if (dists.size() != labels.size()) throw ShapeError("loss: batch and label counts differ");
  for (std::size_t o = 0; o < dists.size(); ++o) {
    if (dists[o].rank() != 1) throw ShapeError("loss: distributions must be rank-1");
    if (labels[o] >= dists[o].size()) {
      std::ostringstream os;
      os << "loss: label " << labels[o] << " out of range for " << dists[o].size() << " classes";
      throw UsageError(os.str());
    }
  }
}

void check_pair(std::span<const Tensor> lowres, std::span<const Tensor> highres) {
  if (lowres.size() != highres.size()) throw ShapeError("loss: low/high-res batch sizes differ");
  for (std::size_t o = 0; o < lowres.size(); ++o) {
    if (lowres[o].shape() != highres[o].shape()) throw ShapeError("loss: low/high-res class counts differ");
  }
}

Tensor accumulate(Tensor acc, const Tensor& term) { return acc.defined() ? ops::add(acc, term) : term; }

Tensor or_zero(const Tensor& t) { return t.defined() ? t : Tensor::scalar(0.0); }

bool correct(const Tensor& dist, std::size_t label) { return argmax(dist.data()) == label; }

}  // namespace

Tensor loss_cross_entropy(std::span<const Tensor> dists, std::span<const std::size_t> labels) {
  check_batch(dists, labels);
  Tensor total;
  for (std::size_t o = 0; o < dists.size(); ++o) {
    total = accumulate(total, ops::log_clamped(ops::pick(dists[o], labels[o]), kLogFloor));
  }
  return ops::scale(total, -1.0 / static_cast<double>(dists.size()));
}

Tensor loss_paradoxical(std::span<const Tensor> lowres, std::span<const Tensor> highres,
                        std::span<const std::size_t> labels) {
  check_batch(lowres, labels);
  check_pair(lowres, highres);
  Tensor total;
  for (std::size_t o = 0; o < lowres.size(); ++o) {
    total = accumulate(total, ops::relu(ops::sub(ops::pick(lowres[o], labels[o]), ops::pick(highres[o], labels[o]))));
  }
  return ops::scale(total, 1.0 / static_cast<double>(lowres.size()));
}

Tensor loss_hesitation(std::span<const Tensor> lowres, std::span<const std::size_t> labels,
                       const Tensor& threshold, double epsilon) {
  check_batch(lowres, labels);
  if (!(epsilon > 0.0)) throw UsageError("loss_hesitation: epsilon must be positive");
  Tensor total;
  for (std::size_t o = 0; o < lowres.size(); ++o) {
    if (!correct(lowres[o], labels[o])) continue;
    Tensor confidence = ops::pick(lowres[o], argmax(lowres[o].data()));
    Tensor target = ops::add_scalar(ops::reshape(threshold, {}), epsilon);
    total = accumulate(total, ops::relu(ops::sub(target, confidence)));
  }
  return or_zero(total);
}

Tensor loss_hubristic(std::span<const Tensor> lowres, std::span<const Tensor> highres,
                      std::span<const std::size_t> labels, const Tensor& threshold) {
  check_batch(lowres, labels);
  check_pair(lowres, highres);
  Tensor total;
  for (std::size_t o = 0; o < lowres.size(); ++o) {
    if (correct(lowres[o], labels[o]) || !correct(highres[o], labels[o])) continue;
    Tensor confidence = ops::pick(lowres[o], argmax(lowres[o].data()));
    total = accumulate(total, ops::relu(ops::sub(confidence, ops::reshape(threshold, {}))));
  }
  return or_zero(total);
}

LossBreakdown loss_total(std::span<const Tensor> lowres, std::span<const Tensor> highres,
                         std::span<const std::size_t> labels, const Tensor& threshold,
                         const LossConfig& config) {
  LossBreakdown out;
  out.lambda_hesitation = config.lambda_hesitation;
  out.lambda_hubristic = config.lambda_hubristic;
  out.epsilon = config.epsilon;
  out.batch_size = lowres.size();

  Tensor ce1 = loss_cross_entropy(lowres, labels);
  Tensor ce2 = loss_cross_entropy(highres, labels);
  Tensor total = ops::add(ce1, ce2);
  out.l_ce1 = ce1.item();
  out.l_ce2 = ce2.item();
  out.l1 = total.item();

  if (config.enable_l2) {
    Tensor l2 = loss_paradoxical(lowres, highres, labels);
    out.l2 = l2.item();
    total = ops::add(total, l2);
  }
  if (config.enable_l3) {
    Tensor he = loss_hesitation(lowres, labels, threshold, config.epsilon);
    Tensor hu = loss_hubristic(lowres, highres, labels, threshold);
    Tensor l3 = ops::scale(ops::add(ops::scale(he, config.lambda_hesitation), ops::scale(hu, config.lambda_hubristic)),
                           1.0 / static_cast<double>(lowres.size()));
    out.l_he = he.item();
    out.l_hu = hu.item();
    out.l3 = l3.item();
    total = ops::add(total, l3);
  }
  out.l_total = total.item();
  out.total = total;
  return out;
}

}  // namespace sos
