#include "acmseg/model.hpp"
#include "acmseg/ops.hpp"

namespace acm::model {

Bottleneck Bottleneck::make(const std::string& name, std::int64_t in, std::int64_t mid,
                            std::int64_t out, std::int64_t stride, Rng& rng) {
  Bottleneck b;
  b.conv1 = nn::Conv2dParams::make(name + ".conv1", in, mid, 1, rng, false);
  b.bn1 = nn::NormParams::batch(name + ".bn1", mid);
  b.conv2 = nn::Conv2dParams::make(name + ".conv2", mid, mid, 3, rng, false, stride);
  b.bn2 = nn::NormParams::batch(name + ".bn2", mid);
  b.conv3 = nn::Conv2dParams::make(name + ".conv3", mid, out, 1, rng, false);
  b.bn3 = nn::NormParams::batch(name + ".bn3", out);
  b.has_down = stride != 1 || in != out;
  if (b.has_down) {
    b.down = nn::Conv2dParams::make(name + ".downsample.conv", in, out, 1, rng, false, stride);
    b.down_bn = nn::NormParams::batch(name + ".downsample.bn", out);
  }
  return b;
}

void Bottleneck::collect(nn::ParamList& out) {
  conv1.collect(out);
  bn1.collect(out);
  conv2.collect(out);
  bn2.collect(out);
  conv3.collect(out);
  bn3.collect(out);
  if (has_down) {
    down.collect(out);
    down_bn.collect(out);
  }
}

Tensor bottleneck(const Tensor& x, Bottleneck& b, nn::Mode mode) {
  Tensor y = relu(nn::batch_norm(nn::conv2d(x, b.conv1), b.bn1, mode));
  y = relu(nn::batch_norm(nn::conv2d(y, b.conv2), b.bn2, mode));
  y = nn::batch_norm(nn::conv2d(y, b.conv3), b.bn3, mode);
  const Tensor shortcut = b.has_down ? nn::batch_norm(nn::conv2d(x, b.down), b.down_bn, mode) : x;
  return relu(add(y, shortcut));
}

BasicBlock BasicBlock::make(const std::string& name, std::int64_t channels, Rng& rng) {
  BasicBlock b;
  b.conv1 = nn::Conv2dParams::make(name + ".conv1", channels, channels, 3, rng, false);
  b.bn1 = nn::NormParams::batch(name + ".bn1", channels);
  b.conv2 = nn::Conv2dParams::make(name + ".conv2", channels, channels, 3, rng, false);
  b.bn2 = nn::NormParams::batch(name + ".bn2", channels);
  return b;
}

void BasicBlock::collect(nn::ParamList& out) {
  conv1.collect(out);
  bn1.collect(out);
  conv2.collect(out);
  bn2.collect(out);
}

Tensor basic_block(const Tensor& x, BasicBlock& b, nn::Mode mode) {
  const Tensor y = relu(nn::batch_norm(nn::conv2d(x, b.conv1), b.bn1, mode));
  return relu(add(nn::batch_norm(nn::conv2d(y, b.conv2), b.bn2, mode), x));
}

Adapters Adapters::make(const std::string& name, std::int64_t channels, std::int64_t dim,
                        Rng& rng) {
  Adapters a;
  a.norm = nn::NormParams::layer(name + ".norm", channels);
  a.to_tokens = nn::LinearParams::make(name + ".to_tokens", channels, dim, rng);
  a.to_map = nn::LinearParams::make(name + ".to_map", dim, channels, rng);
  return a;
}

void Adapters::collect(nn::ParamList& out) {
  norm.collect(out);
  to_tokens.collect(out);
  to_map.collect(out);
}

Tensor adapter_to_tokens(const Tensor& f, const Adapters& a) {
  if (f.dim() != 4 || f.shape()[1] != a.to_tokens.weight.value.shape()[1]) {
    fail(Errc::ShapeMismatch, "adapter expects [n," +
                                  std::to_string(a.to_tokens.weight.value.shape()[1]) +
                                  ",h,w], got " + to_string(f.shape()));
  }
  return nn::linear(nn::layer_norm(permute(f, {0, 2, 3, 1}), a.norm), a.to_tokens);
}

Tensor adapter_to_map(const Tensor& tokens, const Adapters& a) {
  if (tokens.dim() != 4 || tokens.shape()[3] != a.to_map.weight.value.shape()[1]) {
    fail(Errc::ShapeMismatch, "adapter expects [n,h,w," +
                                  std::to_string(a.to_map.weight.value.shape()[1]) + "], got " +
                                  to_string(tokens.shape()));
  }
  return permute(nn::linear(tokens, a.to_map), {0, 3, 1, 2});
}

UpBlock UpBlock::make(const std::string& name, std::int64_t c_prev, std::int64_t c_skip,
                      bool use_mswt, int wavelet_levels, Rng& rng) {
  UpBlock u;
  u.reduce = nn::Conv2dParams::make(name + ".reduce", c_prev, c_skip, 1, rng);
  u.fuse = nn::DepthwiseSeparable::make(name + ".fuse", 2 * c_skip, c_skip, 3, rng);
  u.res = BasicBlock::make(name + ".res", c_skip, rng);
  if (use_mswt) {
    for (int i = 0; i < 2; ++i) {
      u.mswt.push_back(wavelet::MSWTParams::make(name + ".mswt" + std::to_string(i), c_skip,
                                                 wavelet_levels, rng));
    }
  }
  return u;
}

void UpBlock::collect(nn::ParamList& out) {
  reduce.collect(out);
  fuse.collect(out);
  res.collect(out);
  for (auto& m : mswt) m.collect(out);
}

Tensor upsample_block(const Tensor& prev, const Tensor& skip, UpBlock& p, nn::Mode mode) {
  if (prev.dim() != 4 || skip.dim() != 4 || prev.shape()[0] != skip.shape()[0] ||
      skip.shape()[2] != 2 * prev.shape()[2] || skip.shape()[3] != 2 * prev.shape()[3] ||
      skip.shape()[1] != p.reduce.out_channels()) {
    fail(Errc::ShapeMismatch, "upsample block got prev " + to_string(prev.shape()) + " and skip " +
                                  to_string(skip.shape()));
  }
  const Tensor parts[] = {nn::bilinear_upsample2x(nn::conv2d(prev, p.reduce)), skip};
  Tensor y = nn::depthwise_separable_conv(concat(parts, 1), p.fuse);
  y = basic_block(y, p.res, mode);
  for (auto& m : p.mswt) y = wavelet::mswt(y, m, mode);
  return y;
}

SegHead SegHead::make(const std::string& name, std::int64_t channels, std::int64_t classes,
                      Rng& rng) {
  SegHead h;
  h.fuse = nn::DepthwiseSeparable::make(name + ".fuse", channels, channels, 3, rng);
  h.classifier = nn::Conv2dParams::make(name + ".classifier", channels, classes, 1, rng);
  return h;
}

void SegHead::collect(nn::ParamList& out) {
  fuse.collect(out);
  classifier.collect(out);
}

Tensor seg_head(const Tensor& x, const SegHead& p) {
  if (x.dim() != 4 || x.shape()[1] != p.classifier.in_channels()) {
    fail(Errc::ShapeMismatch, "seg head expects [n," + std::to_string(p.classifier.in_channels()) +
                                  ",h,w], got " + to_string(x.shape()));
  }
  return nn::conv2d(nn::depthwise_separable_conv(nn::bilinear_upsample2x(x), p.fuse),
                    p.classifier);
}

}  // namespace acm::model
