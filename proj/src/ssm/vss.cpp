#include "acmseg/ops.hpp"
#include "acmseg/ssm.hpp"

namespace acm::ssm {

VSSBlockParams VSSBlockParams::make(const std::string& name, std::int64_t d_model,
                                    std::int64_t expansion, std::int64_t d_state,
                                    bool shared_projection, Rng& rng) {
  if (d_model < 1 || expansion < 1 || d_state < 1) {
    fail(Errc::InvalidConfig, "vss block needs positive d_model, expansion and d_state");
  }
  VSSBlockParams p;
  p.d_model = d_model;
  p.d_inner = expansion * d_model;
  const std::int64_t dt_rank = (d_model + 15) / 16;
  p.norm = nn::NormParams::layer(name + ".norm", d_model);
  p.in_proj = nn::LinearParams::make(name + ".in_proj", d_model, 2 * p.d_inner, rng, false);
  p.dwconv = nn::Conv2dParams::make(name + ".dwconv", p.d_inner, p.d_inner, 3, rng, true, 1,
                                    p.d_inner);
  p.s6 = S6Params::make(name + ".ssm", p.d_inner, d_state, dt_rank, 4, shared_projection, rng);
  p.out_norm = nn::NormParams::layer(name + ".out_norm", p.d_inner);
  p.out_proj = nn::LinearParams::make(name + ".out_proj", p.d_inner, d_model, rng, false);
  return p;
}

void VSSBlockParams::collect(nn::ParamList& out) {
  norm.collect(out);
  in_proj.collect(out);
  dwconv.collect(out);
  s6.collect(out);
  out_norm.collect(out);
  out_proj.collect(out);
}

Tensor vss_block(const Tensor& x, const VSSBlockParams& p) {
  if (x.dim() != 4 || x.shape()[3] != p.d_model) {
    fail(Errc::ShapeMismatch, "vss_block expects [n,h,w," + std::to_string(p.d_model) +
                                  "], got " + to_string(x.shape()));
  }
  const Tensor xz = nn::linear(nn::layer_norm(x, p.norm), p.in_proj);
  const Tensor signal = permute(slice(xz, 3, 0, p.d_inner), {0, 3, 1, 2});
  const Tensor gate = slice(xz, 3, p.d_inner, p.d_inner);
  const Tensor scanned = ss2d(silu(nn::conv2d(signal, p.dwconv)), p.s6);
  const Tensor y = nn::layer_norm(permute(scanned, {0, 2, 3, 1}), p.out_norm);
  return add(x, nn::linear(mul(y, silu(gate)), p.out_proj));
}

}  // namespace acm::ssm
