#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "acmseg/nn.hpp"
#include "acmseg/tensor.hpp"

namespace acm::wavelet {

// One-level orthonormal Haar sub-bands, each [n, c, h/2, w/2].
struct WaveletBands {
  Tensor ll, lh, hl, hh;
};

// Per 2x2 block [[a, b], [c, d]]:
//   ll = (a+b+c+d)/2   lh = (a+b-c-d)/2   hl = (a-b+c-d)/2   hh = (a-b-c+d)/2
// Packed layout is [n, c, 4, h/2, w/2] with bands in that order.
Tensor dwt2_haar_packed(const Tensor& x);
Tensor idwt2_haar_packed(const Tensor& packed);

WaveletBands dwt2_haar(const Tensor& x);
Tensor idwt2_haar(const WaveletBands& bands);

WaveletBands unpack_bands(const Tensor& packed);
Tensor pack_bands(const WaveletBands& bands);

// Wavelet-domain convolution with kernel size k:
//   y = dwconv_k(x) + idwt(dwconv_k(dwt(x)))
// where the band conv acts depthwise on all 4c sub-band channels. With more
// than one level, the low band is decomposed again and its reconstruction is
// added back into the parent low band before the inverse transform.
struct WTConvParams {
  std::int64_t channels = 0;
  std::int64_t kernel = 1;
  nn::Conv2dParams spatial;             // depthwise c -> c with bias
  std::vector<nn::Conv2dParams> bands;  // one per level, depthwise 4c -> 4c

  static WTConvParams make(const std::string& name, std::int64_t channels, std::int64_t kernel,
                           int levels, Rng& rng);
  int levels() const { return static_cast<int>(bands.size()); }
  void collect(nn::ParamList& out);
};

Tensor wtconv(const Tensor& x, const WTConvParams& p);

inline constexpr std::array<std::int64_t, 3> kMswtKernels{1, 3, 5};

// Three parallel WTConv branches (kernels 1, 3, 5) summed, batch-normalized,
// ReLU'd, and added back onto the input.
struct MSWTParams {
  std::array<WTConvParams, 3> branches;
  nn::NormParams bn;

  static MSWTParams make(const std::string& name, std::int64_t channels, int levels, Rng& rng);
  void collect(nn::ParamList& out);
};

Tensor mswt(const Tensor& z_in, MSWTParams& p, nn::Mode mode);

}  // namespace acm::wavelet
