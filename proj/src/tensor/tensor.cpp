#include "acmseg/tensor.hpp"

#include <atomic>
#include <sstream>

#include "acmseg/autograd.hpp"

namespace acm {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DtypeMismatch: return "DtypeMismatch";
    case Errc::InvalidAxis: return "InvalidAxis";
    case Errc::DivisionByZero: return "DivisionByZero";
    case Errc::NotScalar: return "NotScalar";
    case Errc::TapeConsumed: return "TapeConsumed";
    case Errc::NonFiniteOutput: return "NonFiniteOutput";
    case Errc::NonIntegralOutputSize: return "NonIntegralOutputSize";
    case Errc::OddSpatialDim: return "OddSpatialDim";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::ConfigMismatch: return "ConfigMismatch";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::Io: return "Io";
    case Errc::BadMagic: return "BadMagic";
    case Errc::BadVersion: return "BadVersion";
    case Errc::LengthMismatch: return "LengthMismatch";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

const char* dtype_name(DType dt) noexcept { return dt == DType::f32 ? "f32" : "f64"; }

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (std::int64_t i = static_cast<std::int64_t>(shape.size()) - 2; i >= 0; --i) {
    s[i] = s[i + 1] * shape[i + 1];
  }
  return s;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
std::atomic<DType> g_default_dtype{DType::f32};

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d < 1) fail(Errc::ShapeMismatch, "dimension sizes must be >= 1, got " + to_string(shape));
  }
}
}  // namespace

DType default_dtype() noexcept { return g_default_dtype.load(); }
void set_default_dtype(DType dt) noexcept { g_default_dtype.store(dt); }

DtypeScope::DtypeScope(DType dt) : saved_(default_dtype()) { set_default_dtype(dt); }
DtypeScope::~DtypeScope() { set_default_dtype(saved_); }

Tensor Tensor::full(Shape shape, double value, DType dt) {
  check_shape(shape);
  return dispatch(dt, [&]<typename T>() {
    std::vector<T> v(static_cast<std::size_t>(acm::numel(shape)), static_cast<T>(value));
    return Tensor::from<T>(std::move(shape), std::move(v));
  });
}

Tensor Tensor::zeros(Shape shape, DType dt) { return full(std::move(shape), 0.0, dt); }
Tensor Tensor::ones(Shape shape, DType dt) { return full(std::move(shape), 1.0, dt); }
Tensor Tensor::scalar(double value, DType dt) { return full({1}, value, dt); }

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dt) {
  return from_doubles(std::move(shape), std::span<const double>(values.begin(), values.size()),
                      dt);
}

Tensor Tensor::from_doubles(Shape shape, std::span<const double> values, DType dt) {
  check_shape(shape);
  return dispatch(dt, [&]<typename T>() {
    std::vector<T> v(values.begin(), values.end());
    return Tensor::from<T>(std::move(shape), std::move(v));
  });
}

std::int64_t Tensor::size(std::int64_t axis) const {
  const auto r = dim();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail(Errc::InvalidAxis, "axis out of range for " + to_string(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

std::vector<double> Tensor::to_doubles() const {
  return dispatch(dtype_, [&]<typename T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

double Tensor::item() const {
  if (numel() != 1) fail(Errc::NotScalar, "item() on tensor of shape " + to_string(shape_));
  return dispatch(dtype_, [&]<typename T>() { return static_cast<double>(data<T>()[0]); });
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<std::int64_t>(index.size()) != dim()) {
    fail(Errc::ShapeMismatch, "index rank does not match " + to_string(shape_));
  }
  const auto strides = strides_of(shape_);
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape_[k]) fail(Errc::InvalidAxis, "index out of range");
    flat += i * strides[k++];
  }
  return dispatch(dtype_, [&]<typename T>() { return static_cast<double>(data<T>()[flat]); });
}

Tensor Tensor::to(DType dt) const {
  return dispatch(dtype_, [&]<typename S>() {
    auto src = data<S>();
    return dispatch(dt, [&]<typename D>() {
      std::vector<D> v(src.begin(), src.end());
      return Tensor::from<D>(shape_, std::move(v));
    });
  });
}

Tensor Tensor::clone() const { return to(dtype_); }

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_uid_ = 0;
  t.node_ = -1;
  return t;
}

bool Tensor::tracked() const noexcept {
  const Tape* tape = active_tape();
  return tape != nullptr && node_ >= 0 && tape_uid_ == tape->uid();
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    fail(Errc::DtypeMismatch, std::string(op) + ": " + dtype_name(a.dtype()) + " vs " +
                                  dtype_name(b.dtype()));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(Errc::ShapeMismatch,
         std::string(op) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

Parameter::Parameter(std::string n, Tensor v, bool decay_weight)
    : name(std::move(n)), value(std::move(v)), decay(decay_weight) {
  grad = Tensor::zeros(value.shape(), value.dtype());
}

void Parameter::zero_grad() { grad = Tensor::zeros(value.shape(), value.dtype()); }

}  // namespace acm
