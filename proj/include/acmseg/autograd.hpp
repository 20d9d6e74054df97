#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "acmseg/tensor.hpp"

namespace acm {

// Collects input gradients produced by one node's backward rule.
class GradSink {
 public:
  bool wants(std::size_t input) const { return input < ids_.size() && ids_[input] >= 0; }
  void add(std::size_t input, Tensor grad);

 private:
  friend class Tape;
  GradSink(Tape& tape, const std::vector<std::int64_t>& ids) : tape_(tape), ids_(ids) {}
  Tape& tape_;
  const std::vector<std::int64_t>& ids_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

// Record of executed operations for one forward pass. Single-use: a second
// backward raises TapeConsumed. Confined to the thread that created it.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t uid() const noexcept { return uid_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  // Registers `t` as a leaf and returns a tracked alias.
  Tensor watch(const Tensor& t);
  // Leaf bound to a parameter; repeated calls return the same leaf.
  Tensor track(const Parameter& p);

  void record(Tensor& out, std::span<const Tensor* const> inputs, BackwardFn fn,
              const char* op);

  // Reverse pass from a scalar loss. Gradients for watched leaves are
  // available through grad() afterwards.
  void backward(const Tensor& loss);
  // Reverse pass that also writes every parameter's grad (zeros when the
  // parameter is unreachable from the loss) and returns name -> gradient.
  std::map<std::string, Tensor> backward(const Tensor& loss,
                                         std::span<Parameter* const> params);

  // Gradient of a leaf returned by watch()/track(); zeros if unreachable.
  Tensor grad(const Tensor& leaf) const;

  struct Node {
    Shape shape;
    DType dtype;
    std::vector<std::int64_t> inputs;
    BackwardFn fn;
    const char* op;
  };
  const std::vector<Node>& nodes() const noexcept { return nodes_; }

 private:
  friend class GradSink;
  std::int64_t add_node(const Tensor& like, std::vector<std::int64_t> inputs, BackwardFn fn,
                        const char* op);
  void accumulate(std::int64_t id, Tensor g);

  std::uint64_t uid_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<const Parameter*, std::int64_t> param_leaves_;
};

// Tape that ops record onto in this thread, or nullptr.
Tape* active_tape() noexcept;

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* saved_;
};

// Suspends recording for its lifetime.
class NoTrace {
 public:
  NoTrace();
  ~NoTrace();
  NoTrace(const NoTrace&) = delete;
  NoTrace& operator=(const NoTrace&) = delete;

 private:
  Tape* saved_;
};

// Value of `p` as seen by the active tape (tracked leaf) or untracked.
Tensor use(const Parameter& p);

// Helper for op implementations.
inline void record(Tensor& out, std::initializer_list<const Tensor*> inputs, BackwardFn fn,
                   const char* op) {
  if (Tape* tape = active_tape()) {
    tape->record(out, std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                 std::move(fn), op);
  }
}

}  // namespace acm
