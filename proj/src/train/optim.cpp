#include <cmath>
#include <numbers>

#include "acmseg/train.hpp"

namespace acm::train {

AdamW::AdamW(double weight_decay, double beta1, double beta2, double eps)
    : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

void AdamW::step(std::span<Parameter* const> params, double lr) {
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.push_back(Tensor::zeros(p->value.shape(), p->value.dtype()));
      v_.push_back(Tensor::zeros(p->value.shape(), p->value.dtype()));
    }
  }
  if (m_.size() != params.size()) fail(Errc::ShapeMismatch, "optimizer built for other params");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.grad.defined()) continue;
    check_same_shape(p.value, p.grad, "adamw grad");
    check_same_shape(p.value, m_[i], "adamw moments");
    if (!TensorAccess::unique(p.value)) p.value = p.value.clone();
    const double decay = p.decay ? 1.0 - lr * wd_ : 1.0;
    dispatch(p.value.dtype(), [&]<typename T>() {
      auto w = TensorAccess::mutable_data<T>(p.value);
      auto m = TensorAccess::mutable_data<T>(m_[i]);
      auto v = TensorAccess::mutable_data<T>(v_[i]);
      const auto g = p.grad.data<T>();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = static_cast<T>(b1_ * m[j] + (1.0 - b1_) * g[j]);
        v[j] = static_cast<T>(b2_ * v[j] + (1.0 - b2_) * g[j] * g[j]);
        const double mhat = m[j] / c1, vhat = v[j] / c2;
        w[j] = static_cast<T>(w[j] * decay - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    });
  }
}

std::vector<std::pair<std::string, Tensor>> AdamW::state(
    std::span<Parameter* const> params) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < m_.size() && i < params.size(); ++i) {
    out.emplace_back("optim.m." + params[i]->name, m_[i]);
    out.emplace_back("optim.v." + params[i]->name, v_[i]);
  }
  return out;
}

void AdamW::load_state(std::span<Parameter* const> params,
                       const std::vector<std::pair<std::string, Tensor>>& state, std::int64_t t) {
  std::vector<Tensor> m(params.size()), v(params.size());
  for (const auto& [name, tensor] : state) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (name == "optim.m." + params[i]->name) m[i] = tensor.to(params[i]->value.dtype());
      if (name == "optim.v." + params[i]->name) v[i] = tensor.to(params[i]->value.dtype());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!m[i].defined() || !v[i].defined()) {
      fail(Errc::ConfigMismatch, "optimizer state missing for " + params[i]->name);
    }
    check_same_shape(params[i]->value, m[i], "adamw state");
  }
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

double cosine_lr(std::int64_t t, std::int64_t total, double lr0, double lr_min) {
  if (total <= 0) return lr0;
  const double frac = static_cast<double>(std::clamp<std::int64_t>(t, 0, total)) /
                      static_cast<double>(total);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace acm::train
