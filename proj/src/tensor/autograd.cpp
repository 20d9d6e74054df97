#include "acmseg/autograd.hpp"

#include <atomic>

namespace acm {

namespace {
thread_local Tape* t_active = nullptr;
std::atomic<std::uint64_t> g_next_uid{1};

Tensor add_raw(const Tensor& a, const Tensor& b) {
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return Tensor::from<T>(a.shape(), std::move(out));
  });
}
}  // namespace

Tape* active_tape() noexcept { return t_active; }

TapeScope::TapeScope(Tape& tape) : saved_(t_active) { t_active = &tape; }
TapeScope::~TapeScope() { t_active = saved_; }

NoTrace::NoTrace() : saved_(t_active) { t_active = nullptr; }
NoTrace::~NoTrace() { t_active = saved_; }

void GradSink::add(std::size_t input, Tensor grad) {
  if (!wants(input)) return;
  tape_.accumulate(ids_[input], std::move(grad));
}

Tape::Tape() : uid_(g_next_uid.fetch_add(1)) {}
Tape::~Tape() = default;

std::int64_t Tape::add_node(const Tensor& like, std::vector<std::int64_t> inputs, BackwardFn fn,
                            const char* op) {
  nodes_.push_back(Node{like.shape(), like.dtype(), std::move(inputs), std::move(fn), op});
  grads_.emplace_back();
  return static_cast<std::int64_t>(nodes_.size()) - 1;
}

Tensor Tape::watch(const Tensor& t) {
  Tensor out = t.detach();
  out.tape_uid_ = uid_;
  out.node_ = add_node(t, {}, nullptr, "leaf");
  return out;
}

Tensor Tape::track(const Parameter& p) {
  auto it = param_leaves_.find(&p);
  Tensor out = p.value.detach();
  out.tape_uid_ = uid_;
  if (it != param_leaves_.end() && nodes_[it->second].shape == p.value.shape()) {
    out.node_ = it->second;
    return out;
  }
  out.node_ = add_node(p.value, {}, nullptr, "param");
  param_leaves_[&p] = out.node_;
  return out;
}

void Tape::record(Tensor& out, std::span<const Tensor* const> inputs, BackwardFn fn,
                  const char* op) {
  if (consumed_) fail(Errc::TapeConsumed, std::string("recording ") + op + " on a consumed tape");
  std::vector<std::int64_t> ids;
  ids.reserve(inputs.size());
  bool any = false;
  for (const Tensor* in : inputs) {
    const bool mine = in != nullptr && in->node_ >= 0 && in->tape_uid_ == uid_;
    ids.push_back(mine ? in->node_ : -1);
    any = any || mine;
  }
  if (!any) return;
  out.tape_uid_ = uid_;
  out.node_ = add_node(out, std::move(ids), std::move(fn), op);
}

void Tape::accumulate(std::int64_t id, Tensor g) {
  auto& slot = grads_[static_cast<std::size_t>(id)];
  const auto& node = nodes_[static_cast<std::size_t>(id)];
  if (g.shape() != node.shape) {
    fail(Errc::ShapeMismatch, std::string("gradient for ") + node.op + " has shape " +
                                  to_string(g.shape()) + ", expected " + to_string(node.shape));
  }
  g = g.detach();
  if (!slot.defined()) {
    slot = std::move(g);
  } else if (TensorAccess::unique(slot)) {
    dispatch(slot.dtype(), [&]<typename T>() {
      auto dst = TensorAccess::mutable_data<T>(slot);
      auto src = g.data<T>();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    });
  } else {
    slot = add_raw(slot, g);
  }
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) fail(Errc::TapeConsumed, "backward called twice on the same tape");
  if (loss.numel() != 1) fail(Errc::NotScalar, "loss has shape " + to_string(loss.shape()));
  consumed_ = true;
  if (loss.node_ < 0 || loss.tape_uid_ != uid_) return;

  NoTrace pause;
  grads_[static_cast<std::size_t>(loss.node_)] = Tensor::ones(loss.shape(), loss.dtype());
  for (std::int64_t id = loss.node_; id >= 0; --id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.fn) continue;
    Tensor g = std::move(grads_[static_cast<std::size_t>(id)]);
    grads_[static_cast<std::size_t>(id)] = Tensor();
    if (g.defined()) {
      GradSink sink(*this, node.inputs);
      node.fn(g, sink);
    }
    node.fn = nullptr;  // releases saved context
  }
}

std::map<std::string, Tensor> Tape::backward(const Tensor& loss,
                                             std::span<Parameter* const> params) {
  backward(loss);
  std::map<std::string, Tensor> out;
  for (Parameter* p : params) {
    auto it = param_leaves_.find(p);
    Tensor g;
    if (it != param_leaves_.end()) g = grads_[static_cast<std::size_t>(it->second)];
    if (!g.defined()) g = Tensor::zeros(p->value.shape(), p->value.dtype());
    p->grad = g;
    out[p->name] = g;
  }
  return out;
}

Tensor Tape::grad(const Tensor& leaf) const {
  if (leaf.tape_uid_ == uid_ && leaf.node_ >= 0) {
    const auto& g = grads_[static_cast<std::size_t>(leaf.node_)];
    if (g.defined()) return g;
  }
  return Tensor::zeros(leaf.shape(), leaf.dtype());
}

Tensor use(const Parameter& p) {
  if (Tape* tape = active_tape()) return tape->track(p);
  return p.value;
}

}  // namespace acm
