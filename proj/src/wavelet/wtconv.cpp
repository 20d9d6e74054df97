#include "acmseg/ops.hpp"
#include "acmseg/wavelet.hpp"

namespace acm::wavelet {

WTConvParams WTConvParams::make(const std::string& name, std::int64_t channels,
                                std::int64_t kernel, int levels, Rng& rng) {
  WTConvParams p;
  p.channels = channels;
  p.kernel = kernel;
  p.spatial = nn::Conv2dParams::make(name + ".spatial", channels, channels, kernel, rng, true, 1,
                                     channels);
  for (int l = 0; l < levels; ++l) {
    auto band = nn::Conv2dParams::make(name + ".wavelet" + std::to_string(l), 4 * channels,
                                       4 * channels, kernel, rng, false, 1, 4 * channels);
    // Sub-band kernels start at a tenth of the spatial scale.
    band.weight.value = scale(band.weight.value, 0.1);
    p.bands.push_back(std::move(band));
  }
  return p;
}

void WTConvParams::collect(nn::ParamList& out) {
  spatial.collect(out);
  for (auto& b : bands) b.collect(out);
}

Tensor wtconv(const Tensor& x, const WTConvParams& p) {
  if (x.dim() != 4 || x.shape()[1] != p.channels) {
    fail(Errc::ShapeMismatch, "wtconv expects [n," + std::to_string(p.channels) + ",h,w], got " +
                                  to_string(x.shape()));
  }
  Tensor y = nn::conv2d(x, p.spatial);
  if (p.bands.empty()) return y;

  const std::int64_t n = x.shape()[0], c = p.channels;
  std::vector<Tensor> filtered;
  Tensor cur = x;
  for (const auto& band : p.bands) {
    const Tensor packed = dwt2_haar_packed(cur);
    const std::int64_t h2 = packed.shape()[3], w2 = packed.shape()[4];
    const Tensor z = nn::conv2d(reshape(packed, {n, 4 * c, h2, w2}), band);
    filtered.push_back(reshape(z, {n, c, 4, h2, w2}));
    cur = reshape(slice(packed, 2, 0, 1), {n, c, h2, w2});
  }
  Tensor rec;
  for (auto it = filtered.rbegin(); it != filtered.rend(); ++it) {
    Tensor z = *it;
    if (rec.defined()) {
      const Shape& s = z.shape();
      const Tensor parts[] = {reshape(rec, {s[0], s[1], 1, s[3], s[4]}),
                              Tensor::zeros({s[0], s[1], 3, s[3], s[4]}, z.dtype())};
      z = add(z, concat(parts, 2));
    }
    rec = idwt2_haar_packed(z);
  }
  return add(y, rec);
}

MSWTParams MSWTParams::make(const std::string& name, std::int64_t channels, int levels,
                            Rng& rng) {
  MSWTParams p;
  for (std::size_t i = 0; i < kMswtKernels.size(); ++i) {
    p.branches[i] = WTConvParams::make(name + ".branch" + std::to_string(i), channels,
                                       kMswtKernels[i], levels, rng);
  }
  p.bn = nn::NormParams::batch(name + ".bn", channels);
  return p;
}

void MSWTParams::collect(nn::ParamList& out) {
  for (auto& b : branches) b.collect(out);
  bn.collect(out);
}

Tensor mswt(const Tensor& z_in, MSWTParams& p, nn::Mode mode) {
  Tensor sum = wtconv(z_in, p.branches[0]);
  for (std::size_t i = 1; i < p.branches.size(); ++i) sum = add(sum, wtconv(z_in, p.branches[i]));
  return add(z_in, relu(nn::batch_norm(sum, p.bn, mode)));
}

}  // namespace acm::wavelet
