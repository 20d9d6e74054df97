#include <cmath>

#include "acmseg/ops.hpp"
#include "acmseg/train.hpp"

namespace acm::train {

std::vector<std::int32_t> labels_of(const Tensor& mask) {
  const auto v = mask.to_doubles();
  std::vector<std::int32_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0 || v[i] != std::floor(v[i]) || v[i] > 1e6) {
      fail(Errc::LabelOutOfRange, "label " + std::to_string(v[i]) + " is not a class index");
    }
    out[i] = static_cast<std::int32_t>(v[i]);
  }
  return out;
}

namespace {

// One-hot [n,K,h,w] in the logits dtype.
Tensor one_hot(const Tensor& logits, const Tensor& target) {
  if (logits.dim() != 4 || target.dim() != 3 || target.shape()[0] != logits.shape()[0] ||
      target.shape()[1] != logits.shape()[2] || target.shape()[2] != logits.shape()[3]) {
    fail(Errc::ShapeMismatch, "loss expects logits [n,K,h,w] and target [n,h,w], got " +
                                  to_string(logits.shape()) + " and " + to_string(target.shape()));
  }
  const std::int64_t n = logits.shape()[0], k = logits.shape()[1];
  const std::int64_t hw = logits.shape()[2] * logits.shape()[3];
  const auto labels = labels_of(target);
  std::vector<double> oh(static_cast<std::size_t>(n * k * hw), 0.0);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < hw; ++i) {
      const std::int32_t c = labels[b * hw + i];
      if (c >= k) {
        fail(Errc::LabelOutOfRange,
             "label " + std::to_string(c) + " with " + std::to_string(k) + " classes");
      }
      oh[(b * k + c) * hw + i] = 1.0;
    }
  return Tensor::from_doubles(logits.shape(), oh, logits.dtype());
}

}  // namespace

Tensor dice_loss(const Tensor& logits, const Tensor& target, double smooth) {
  if (!(smooth > 0)) fail(Errc::InvalidConfig, "dice smoothing must be positive");
  const Tensor g = one_hot(logits, target);
  const Tensor p = softmax(logits, 1);
  const std::vector<std::int64_t> axes{0, 2, 3};
  const Tensor inter = sum(mul(p, g), axes);
  const Tensor denom = add_scalar(add(sum(p, axes), sum(g, axes)), smooth);
  const Tensor dice = div(add_scalar(scale(inter, 2.0), smooth), denom);
  return add_scalar(neg(mean(dice)), 1.0);
}

Tensor ce_loss(const Tensor& logits, const Tensor& target) {
  const Tensor g = one_hot(logits, target);
  return neg(mean(sum(mul(log_softmax(logits, 1), g), {1})));
}

Tensor total_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg) {
  if (cfg.alpha < 0 || cfg.alpha > 1) fail(Errc::InvalidConfig, "alpha must lie in [0, 1]");
  if (cfg.alpha == 1.0) return dice_loss(logits, target, cfg.dice_smooth);
  if (cfg.alpha == 0.0) return ce_loss(logits, target);
  return add(scale(dice_loss(logits, target, cfg.dice_smooth), cfg.alpha),
             scale(ce_loss(logits, target), 1.0 - cfg.alpha));
}

}  // namespace acm::train
