#include "acmseg/ops.hpp"
#include "acmseg/wavelet.hpp"

namespace acm::wavelet {

namespace {

template <class T>
std::vector<T> haar_forward(std::span<const T> x, std::int64_t planes, std::int64_t h,
                            std::int64_t w) {
  const std::int64_t h2 = h / 2, w2 = w / 2, band = h2 * w2;
  std::vector<T> out(x.size());
  const T half = T(0.5);
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * h * w;
    T* ll = out.data() + p * 4 * band;
    T* lh = ll + band;
    T* hl = lh + band;
    T* hh = hl + band;
    for (std::int64_t i = 0; i < h2; ++i) {
      const T* r0 = src + 2 * i * w;
      const T* r1 = r0 + w;
      for (std::int64_t j = 0; j < w2; ++j) {
        const T a = r0[2 * j], b = r0[2 * j + 1], c = r1[2 * j], d = r1[2 * j + 1];
        const std::int64_t k = i * w2 + j;
        ll[k] = (a + b + c + d) * half;
        lh[k] = (a + b - c - d) * half;
        hl[k] = (a - b + c - d) * half;
        hh[k] = (a - b - c + d) * half;
      }
    }
  }
  return out;
}

template <class T>
std::vector<T> haar_inverse(std::span<const T> bands, std::int64_t planes, std::int64_t h2,
                            std::int64_t w2) {
  const std::int64_t w = 2 * w2, band = h2 * w2;
  std::vector<T> out(bands.size());
  const T half = T(0.5);
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* ll = bands.data() + p * 4 * band;
    const T* lh = ll + band;
    const T* hl = lh + band;
    const T* hh = hl + band;
    T* dst = out.data() + p * 4 * band;
    for (std::int64_t i = 0; i < h2; ++i) {
      T* r0 = dst + 2 * i * w;
      T* r1 = r0 + w;
      for (std::int64_t j = 0; j < w2; ++j) {
        const std::int64_t k = i * w2 + j;
        r0[2 * j] = (ll[k] + lh[k] + hl[k] + hh[k]) * half;
        r0[2 * j + 1] = (ll[k] + lh[k] - hl[k] - hh[k]) * half;
        r1[2 * j] = (ll[k] - lh[k] + hl[k] - hh[k]) * half;
        r1[2 * j + 1] = (ll[k] - lh[k] - hl[k] + hh[k]) * half;
      }
    }
  }
  return out;
}

}  // namespace

Tensor dwt2_haar_packed(const Tensor& x) {
  if (x.dim() != 4) fail(Errc::ShapeMismatch, "dwt2_haar expects [n,c,h,w]");
  const std::int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (h % 2 != 0 || w % 2 != 0) {
    fail(Errc::OddSpatialDim, "dwt2_haar needs even spatial dims, got " + to_string(x.shape()));
  }
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    return Tensor::from<T>({n, c, 4, h / 2, w / 2}, haar_forward<T>(x.data<T>(), n * c, h, w));
  });
  if (!needs_grad({&x})) return out;
  record(out, {&x}, [](const Tensor& g, GradSink& s) { s.add(0, idwt2_haar_packed(g)); },
         "dwt2_haar");
  return out;
}

Tensor idwt2_haar_packed(const Tensor& packed) {
  if (packed.dim() != 5 || packed.shape()[2] != 4) {
    fail(Errc::ShapeMismatch, "idwt2_haar expects [n,c,4,h,w], got " + to_string(packed.shape()));
  }
  const std::int64_t n = packed.shape()[0], c = packed.shape()[1];
  const std::int64_t h2 = packed.shape()[3], w2 = packed.shape()[4];
  Tensor out = dispatch(packed.dtype(), [&]<typename T>() {
    return Tensor::from<T>({n, c, 2 * h2, 2 * w2},
                           haar_inverse<T>(packed.data<T>(), n * c, h2, w2));
  });
  if (!needs_grad({&packed})) return out;
  record(out, {&packed}, [](const Tensor& g, GradSink& s) { s.add(0, dwt2_haar_packed(g)); },
         "idwt2_haar");
  return out;
}

WaveletBands unpack_bands(const Tensor& packed) {
  const Shape& s = packed.shape();
  const Shape band{s[0], s[1], s[3], s[4]};
  return {reshape(slice(packed, 2, 0, 1), band), reshape(slice(packed, 2, 1, 1), band),
          reshape(slice(packed, 2, 2, 1), band), reshape(slice(packed, 2, 3, 1), band)};
}

Tensor pack_bands(const WaveletBands& b) {
  for (const Tensor* t : {&b.lh, &b.hl, &b.hh}) {
    check_same_shape(b.ll, *t, "pack_bands");
    check_same_dtype(b.ll, *t, "pack_bands");
  }
  if (b.ll.dim() != 4) fail(Errc::ShapeMismatch, "bands must be [n,c,h,w]");
  const Shape& s = b.ll.shape();
  const Shape lifted{s[0], s[1], 1, s[2], s[3]};
  const Tensor parts[] = {reshape(b.ll, lifted), reshape(b.lh, lifted), reshape(b.hl, lifted),
                          reshape(b.hh, lifted)};
  return concat(parts, 2);
}

WaveletBands dwt2_haar(const Tensor& x) { return unpack_bands(dwt2_haar_packed(x)); }

Tensor idwt2_haar(const WaveletBands& bands) { return idwt2_haar_packed(pack_bands(bands)); }

}  // namespace acm::wavelet
