#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "acmseg/nn.hpp"
#include "acmseg/tensor.hpp"

namespace acm::ssm {

// Selective-scan recurrence over S independent sequences, per channel c and
// state index n:
//   a_t = exp(delta_t * A[c,n])
//   h_t = a_t * h_{t-1} + delta_t * B_t[n] * u_t      (h_{-1} = 0)
//   y_t = sum_n C_t[n] * h_t[n] + D[c] * u_t
// Shapes: u, delta [S,L,d]; B, C [S,L,N]; A [G,d,N]; D [G,d]. Sequence s uses
// A/D group s % G. delta is taken as given (already positive).
Tensor selective_scan_core(const Tensor& u, const Tensor& delta, const Tensor& A,
                           const Tensor& B, const Tensor& C, const Tensor& D);

// Input-dependent projections producing delta, B and C from the scanned
// feature: x_proj splits into (dt_rank | B | C); delta = softplus(dt_proj(dt)).
struct ScanProjection {
  Parameter x_proj;     // [dt_rank + 2*d_state, d_inner]
  Parameter dt_weight;  // [d_inner, dt_rank]
  Parameter dt_bias;    // [d_inner]
};

struct S6Params {
  std::int64_t d_inner = 0;
  std::int64_t d_state = 16;
  std::int64_t dt_rank = 1;
  std::int64_t groups = 1;          // scan directions with their own A and D
  std::vector<ScanProjection> proj;  // size 1 (shared) or `groups`
  Parameter A_log;                   // [groups, d_inner, d_state]; A = -exp(A_log)
  Parameter D;                       // [groups, d_inner]

  static S6Params make(const std::string& name, std::int64_t d_inner, std::int64_t d_state,
                       std::int64_t dt_rank, std::int64_t groups, bool shared_projection,
                       Rng& rng);
  void collect(nn::ParamList& out);
};

// x_seq [L, d_inner] or [S, L, d_inner] with S a multiple of p.groups.
Tensor selective_scan(const Tensor& x_seq, const S6Params& p);

// Flat pixel visited at step t by direction dir:
//   0 row-major from top-left      1 column-major from top-left
//   2 reverse of 0                 3 reverse of 1
std::vector<std::int64_t> scan_order(int dir, std::int64_t h, std::int64_t w);

// [c,h,w] -> [4,c,h*w] or [n,c,h,w] -> [n,4,c,h*w].
Tensor scan_expand(const Tensor& x);
// Folds each direction back to the grid and sums the four maps.
// [4,c,h*w] -> [c,h,w] or [n,4,c,h*w] -> [n,c,h,w].
Tensor scan_merge(const Tensor& seqs, std::int64_t h, std::int64_t w);

// expand -> per-direction selective scan -> merge. x [c,h,w] or [n,c,h,w].
Tensor ss2d(const Tensor& x, const S6Params& p);

struct VSSBlockParams {
  std::int64_t d_model = 0;
  std::int64_t d_inner = 0;
  nn::NormParams norm;
  nn::LinearParams in_proj;  // d_model -> 2*d_inner (signal | gate)
  nn::Conv2dParams dwconv;   // 3x3 depthwise on d_inner
  S6Params s6;
  nn::NormParams out_norm;
  nn::LinearParams out_proj;  // d_inner -> d_model

  static VSSBlockParams make(const std::string& name, std::int64_t d_model,
                             std::int64_t expansion, std::int64_t d_state,
                             bool shared_projection, Rng& rng);
  void collect(nn::ParamList& out);
};

// Channel-last tokens [n,h,w,d_model]:
//   y = x + out_proj(out_norm(ss2d(silu(dwconv(signal)))) * silu(gate))
// with (signal, gate) = split(in_proj(norm(x))).
Tensor vss_block(const Tensor& x, const VSSBlockParams& p);

}  // namespace acm::ssm
