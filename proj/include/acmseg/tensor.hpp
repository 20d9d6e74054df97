#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "acmseg/error.hpp"

namespace acm {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

const char* dtype_name(DType dt) noexcept;

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

// Invokes f.template operator()<T>() with T matching the runtime dtype.
template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::f32) return f.template operator()<float>();
  return f.template operator()<double>();
}

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
Shape strides_of(const Shape& shape);
std::string to_string(const Shape& shape);

// Process-wide dtype used by factories when none is given. f32 for compute,
// f64 for gradient checks and oracles.
DType default_dtype() noexcept;
void set_default_dtype(DType dt) noexcept;

class DtypeScope {
 public:
  explicit DtypeScope(DType dt);
  ~DtypeScope();
  DtypeScope(const DtypeScope&) = delete;
  DtypeScope& operator=(const DtypeScope&) = delete;

 private:
  DType saved_;
};

class Tape;

// Dense row-major array. The buffer is shared and never mutated once the
// tensor is handed out, so copies are cheap and safe across threads.
class Tensor {
 public:
  using Buffer = std::variant<std::vector<float>, std::vector<double>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, DType dt = default_dtype());
  static Tensor ones(Shape shape, DType dt = default_dtype());
  static Tensor full(Shape shape, double value, DType dt = default_dtype());
  static Tensor scalar(double value, DType dt = default_dtype());
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            DType dt = default_dtype());
  static Tensor from_doubles(Shape shape, std::span<const double> values,
                             DType dt = default_dtype());

  template <class T>
  static Tensor from(Shape shape, std::vector<T> data) {
    if (static_cast<std::int64_t>(data.size()) != acm::numel(shape)) {
      fail(Errc::ShapeMismatch, "buffer of " + std::to_string(data.size()) +
                                    " elements for shape " + to_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = dtype_of<T>();
    t.buffer_ = std::make_shared<Buffer>(std::move(data));
    return t;
  }

  bool defined() const noexcept { return buffer_ != nullptr; }
  const Shape& shape() const noexcept { return shape_; }
  DType dtype() const noexcept { return dtype_; }
  std::int64_t dim() const noexcept { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t numel() const noexcept { return acm::numel(shape_); }
  // Negative axes count from the back.
  std::int64_t size(std::int64_t axis) const;

  template <class T>
  std::span<const T> data() const {
    const auto* v = buffer_ ? std::get_if<std::vector<T>>(buffer_.get()) : nullptr;
    if (v == nullptr) {
      fail(Errc::DtypeMismatch, std::string("tensor holds ") + dtype_name(dtype_) +
                                    ", requested " + dtype_name(dtype_of<T>()));
    }
    return {v->data(), v->size()};
  }

  std::vector<double> to_doubles() const;
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  Tensor to(DType dt) const;
  // Fresh buffer, not tracked by any tape.
  Tensor clone() const;
  // Shares the buffer, drops tape tracking.
  Tensor detach() const;

  bool tracked() const noexcept;
  bool same_buffer(const Tensor& other) const noexcept { return buffer_ == other.buffer_; }

 private:
  friend class Tape;
  friend struct TensorAccess;

  Shape shape_;
  DType dtype_ = DType::f32;
  std::shared_ptr<Buffer> buffer_;
  std::uint64_t tape_uid_ = 0;
  std::int64_t node_ = -1;
};

// Low-level access used by kernels and the tape; not part of the user API.
struct TensorAccess {
  template <class T>
  static std::span<T> mutable_data(Tensor& t) {
    auto& v = std::get<std::vector<T>>(*t.buffer_);
    return {v.data(), v.size()};
  }
  static bool unique(const Tensor& t) { return t.buffer_.use_count() == 1; }
  static Tensor with_shape(const Tensor& t, Shape shape) {
    Tensor out;
    out.shape_ = std::move(shape);
    out.dtype_ = t.dtype_;
    out.buffer_ = t.buffer_;
    return out;
  }
};

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op);
void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

// Trainable tensor with a stable dotted name, e.g.
// "encoder.stage2.block0.conv1.weight".
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;  // false for biases and norm affine terms

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool decay_weight = true);
  void zero_grad();
};

// Non-trainable state saved with the model (batch-norm running statistics).
struct Buffer {
  std::string name;
  Tensor value;
};

}  // namespace acm
