#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "acmseg/autograd.hpp"
#include "acmseg/rng.hpp"
#include "acmseg/tensor.hpp"

namespace acm::nn {

enum class Mode { train, eval };

// Flat view over a component's trainable parameters and saved buffers.
struct ParamList {
  std::vector<Parameter*> params;
  std::vector<Buffer*> buffers;
};

// Kaiming-uniform over fan-in, bound sqrt(6 / fan_in).
Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng);

// ---------------------------------------------------------------- conv2d

struct Conv2dOptions {
  std::int64_t stride_h = 1, stride_w = 1;
  std::int64_t pad_h = 0, pad_w = 0;
  std::int64_t groups = 1;
};

// floor((in + 2 pad - k) / stride) + 1. The floor may only discard trailing
// padding, or anything at all when k < stride (plain subsampling). Otherwise
// NonIntegralOutputSize.
std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                              std::int64_t pad);

// Cross-correlation (no kernel flip). x [n,c,h,w], w [out, c/groups, kh, kw],
// b [out] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dOptions& opt);

struct Conv2dParams {
  Parameter weight;
  Parameter bias;
  bool has_bias = false;
  Conv2dOptions opt;

  // "Same" padding (k/2) unless overridden through opt.
  static Conv2dParams make(const std::string& name, std::int64_t in_ch, std::int64_t out_ch,
                           std::int64_t kernel, Rng& rng, bool bias = true,
                           std::int64_t stride = 1, std::int64_t groups = 1);
  std::int64_t in_channels() const { return weight.value.shape()[1] * opt.groups; }
  std::int64_t out_channels() const { return weight.value.shape()[0]; }
  void collect(ParamList& out);
};

Tensor conv2d(const Tensor& x, const Conv2dParams& p);

// Per-channel spatial conv followed by a 1x1 channel mix. Parameter count
// with biases: c*k*k + c + c*out + out.
struct DepthwiseSeparable {
  Conv2dParams depthwise;
  Conv2dParams pointwise;

  static DepthwiseSeparable make(const std::string& name, std::int64_t in_ch,
                                 std::int64_t out_ch, std::int64_t kernel, Rng& rng);
  void collect(ParamList& out);
};

Tensor depthwise_separable_conv(const Tensor& x, const Conv2dParams& depthwise,
                                const Conv2dParams& pointwise);
Tensor depthwise_separable_conv(const Tensor& x, const DepthwiseSeparable& p);

// ---------------------------------------------------------------- norms

struct NormParams {
  Parameter gamma;
  Parameter beta;
  Buffer running_mean;  // batch norm only
  Buffer running_var;   // batch norm only
  double momentum = 0.1;
  double eps = 1e-5;

  static NormParams batch(const std::string& name, std::int64_t channels);
  static NormParams layer(const std::string& name, std::int64_t channels);
  void collect(ParamList& out);
};

// Per-channel normalization of [n,c,h,w]. Train mode uses biased batch
// statistics and folds the unbiased variance into the running estimate.
Tensor batch_norm(const Tensor& x, NormParams& p, Mode mode);
// Normalizes over the trailing axis with the population variance.
Tensor layer_norm(const Tensor& x, const NormParams& p);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// ---------------------------------------------------------------- misc

enum class Activation { relu, silu };
Tensor activation(Activation kind, const Tensor& x);

struct PoolOptions {
  std::int64_t kernel_h = 2, kernel_w = 2;
  std::int64_t stride_h = 2, stride_w = 2;
  std::int64_t pad_h = 0, pad_w = 0;
};

// Window max; ties and backward go to the first maximum in row-major order.
Tensor max_pool2d(const Tensor& x, const PoolOptions& opt = {});

// align_corners=false: source s = (d + 0.5) / 2 - 0.5 clamped to [0, size-1].
Tensor bilinear_upsample2x(const Tensor& x);

struct LinearParams {
  Parameter weight;  // [out, in]
  Parameter bias;    // [out]
  bool has_bias = false;

  static LinearParams make(const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                           bool bias = true);
  void collect(ParamList& out);
};

// Affine map over the trailing axis: x [..., in] -> [..., out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear(const Tensor& x, const LinearParams& p);

}  // namespace acm::nn
