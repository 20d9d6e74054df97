#include <cmath>

#include "acmseg/ops.hpp"
#include "acmseg/ssm.hpp"

namespace acm::ssm {

namespace {

struct ScanDims {
  std::int64_t s, l, d, n, g;
};

ScanDims check_scan_shapes(const Tensor& u, const Tensor& delta, const Tensor& A,
                           const Tensor& B, const Tensor& C, const Tensor& D) {
  for (const Tensor* t : {&delta, &A, &B, &C, &D}) check_same_dtype(u, *t, "selective_scan");
  if (u.dim() != 3 || A.dim() != 3 || B.dim() != 3 || D.dim() != 2) {
    fail(Errc::ShapeMismatch, "selective_scan expects u [S,L,d], A [G,d,N], B/C [S,L,N], D [G,d]");
  }
  check_same_shape(u, delta, "selective_scan delta");
  check_same_shape(B, C, "selective_scan B/C");
  ScanDims dm{u.shape()[0], u.shape()[1], u.shape()[2], A.shape()[2], A.shape()[0]};
  if (A.shape()[1] != dm.d || D.shape()[0] != dm.g || D.shape()[1] != dm.d ||
      B.shape()[0] != dm.s || B.shape()[1] != dm.l || B.shape()[2] != dm.n || dm.s % dm.g != 0) {
    fail(Errc::ShapeMismatch, "selective_scan parameter shapes disagree with u " +
                                  to_string(u.shape()));
  }
  return dm;
}

}  // namespace

Tensor selective_scan_core(const Tensor& u, const Tensor& delta, const Tensor& A,
                           const Tensor& B, const Tensor& C, const Tensor& D) {
  const ScanDims dm = check_scan_shapes(u, delta, A, B, C, D);
  const bool grad = needs_grad({&u, &delta, &A, &B, &C, &D});
  Tensor states;  // [S, L, d, N] kept for the reverse pass

  Tensor out = dispatch(u.dtype(), [&]<typename T>() {
    auto pu = u.data<T>();
    auto pdt = delta.data<T>();
    auto pa = A.data<T>();
    auto pb = B.data<T>();
    auto pc = C.data<T>();
    auto pd = D.data<T>();
    std::vector<T> y(pu.size());
    std::vector<T> hs(grad ? static_cast<std::size_t>(dm.s * dm.l * dm.d * dm.n) : 0);
    std::vector<T> h(static_cast<std::size_t>(dm.n));
    for (std::int64_t s = 0; s < dm.s; ++s) {
      const std::int64_t g = s % dm.g;
      for (std::int64_t c = 0; c < dm.d; ++c) {
        std::fill(h.begin(), h.end(), T(0));
        const T* a = pa.data() + (g * dm.d + c) * dm.n;
        for (std::int64_t t = 0; t < dm.l; ++t) {
          const std::int64_t i = (s * dm.l + t) * dm.d + c;
          const T ut = pu[i], dt = pdt[i];
          const T* bt = pb.data() + (s * dm.l + t) * dm.n;
          const T* ct = pc.data() + (s * dm.l + t) * dm.n;
          T acc = 0;
          for (std::int64_t k = 0; k < dm.n; ++k) {
            h[k] = std::exp(dt * a[k]) * h[k] + dt * bt[k] * ut;
            acc += ct[k] * h[k];
          }
          y[i] = acc + pd[g * dm.d + c] * ut;
          if (grad) std::copy(h.begin(), h.end(), hs.begin() + i * dm.n);
        }
      }
    }
    if (grad) states = Tensor::from<T>({dm.s, dm.l, dm.d, dm.n}, std::move(hs));
    return Tensor::from<T>(u.shape(), std::move(y));
  });
  if (!grad) return out;

  BackwardFn fn = [dm, states, u = u.detach(), delta = delta.detach(), A = A.detach(),
                   B = B.detach(), C = C.detach(), D = D.detach()](const Tensor& gy,
                                                                   GradSink& sink) {
    dispatch(u.dtype(), [&]<typename T>() {
      auto pu = u.data<T>();
      auto pdt = delta.data<T>();
      auto pa = A.data<T>();
      auto pb = B.data<T>();
      auto pc = C.data<T>();
      auto pd = D.data<T>();
      auto hs = states.data<T>();
      auto pg = gy.data<T>();
      std::vector<T> du(pu.size(), T(0)), ddt(pu.size(), T(0));
      std::vector<T> dA(pa.size(), T(0)), dB(pb.size(), T(0)), dC(pc.size(), T(0));
      std::vector<T> dD(pd.size(), T(0));
      std::vector<T> dh(static_cast<std::size_t>(dm.n));
      for (std::int64_t s = 0; s < dm.s; ++s) {
        const std::int64_t g = s % dm.g;
        for (std::int64_t c = 0; c < dm.d; ++c) {
          std::fill(dh.begin(), dh.end(), T(0));
          const T* a = pa.data() + (g * dm.d + c) * dm.n;
          T* da = dA.data() + (g * dm.d + c) * dm.n;
          for (std::int64_t t = dm.l - 1; t >= 0; --t) {
            const std::int64_t i = (s * dm.l + t) * dm.d + c;
            const std::int64_t row = (s * dm.l + t) * dm.n;
            const T ut = pu[i], dt = pdt[i], gt = pg[i];
            const T* ht = hs.data() + i * dm.n;
            const T* hprev = t > 0 ? hs.data() + (i - dm.d) * dm.n : nullptr;
            dD[g * dm.d + c] += gt * ut;
            T du_acc = gt * pd[g * dm.d + c];
            T ddt_acc = 0;
            for (std::int64_t k = 0; k < dm.n; ++k) {
              dC[row + k] += gt * ht[k];
              dh[k] += gt * pc[row + k];
              const T decay = std::exp(dt * a[k]);
              const T hp = hprev ? hprev[k] : T(0);
              ddt_acc += dh[k] * (a[k] * decay * hp + pb[row + k] * ut);
              da[k] += dh[k] * dt * decay * hp;
              dB[row + k] += dh[k] * dt * ut;
              du_acc += dh[k] * dt * pb[row + k];
              dh[k] *= decay;
            }
            du[i] = du_acc;
            ddt[i] = ddt_acc;
          }
        }
      }
      sink.add(0, Tensor::from<T>(u.shape(), std::move(du)));
      sink.add(1, Tensor::from<T>(u.shape(), std::move(ddt)));
      sink.add(2, Tensor::from<T>(A.shape(), std::move(dA)));
      sink.add(3, Tensor::from<T>(B.shape(), std::move(dB)));
      sink.add(4, Tensor::from<T>(C.shape(), std::move(dC)));
      sink.add(5, Tensor::from<T>(D.shape(), std::move(dD)));
    });
  };
  record(out, {&u, &delta, &A, &B, &C, &D}, std::move(fn), "selective_scan");
  return out;
}

S6Params S6Params::make(const std::string& name, std::int64_t d_inner, std::int64_t d_state,
                        std::int64_t dt_rank, std::int64_t groups, bool shared_projection,
                        Rng& rng) {
  S6Params p;
  p.d_inner = d_inner;
  p.d_state = d_state;
  p.dt_rank = dt_rank;
  p.groups = groups;
  const std::int64_t n_proj = shared_projection ? 1 : groups;
  for (std::int64_t i = 0; i < n_proj; ++i) {
    const std::string pre = shared_projection ? name : name + ".dir" + std::to_string(i);
    ScanProjection sp;
    const double xb = 1.0 / std::sqrt(static_cast<double>(d_inner));
    std::vector<double> xw(static_cast<std::size_t>((dt_rank + 2 * d_state) * d_inner));
    for (auto& v : xw) v = rng.uniform(-xb, xb);
    sp.x_proj = Parameter(pre + ".x_proj.weight",
                          Tensor::from_doubles({dt_rank + 2 * d_state, d_inner}, xw));
    const double db = 1.0 / std::sqrt(static_cast<double>(dt_rank));
    std::vector<double> dw(static_cast<std::size_t>(d_inner * dt_rank));
    for (auto& v : dw) v = rng.uniform(-db, db);
    sp.dt_weight = Parameter(pre + ".dt_proj.weight", Tensor::from_doubles({d_inner, dt_rank}, dw));
    // softplus(bias) log-uniform in [1e-3, 1e-1]
    std::vector<double> bias(static_cast<std::size_t>(d_inner));
    for (auto& v : bias) {
      const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      v = dt + std::log(-std::expm1(-dt));
    }
    sp.dt_bias = Parameter(pre + ".dt_proj.bias", Tensor::from_doubles({d_inner}, bias), false);
    p.proj.push_back(std::move(sp));
  }
  std::vector<double> alog(static_cast<std::size_t>(groups * d_inner * d_state));
  for (std::size_t i = 0; i < alog.size(); ++i) {
    alog[i] = std::log(static_cast<double>(i % static_cast<std::size_t>(d_state) + 1));
  }
  p.A_log = Parameter(name + ".A_log", Tensor::from_doubles({groups, d_inner, d_state}, alog),
                      false);
  p.D = Parameter(name + ".D", Tensor::ones({groups, d_inner}), false);
  return p;
}

void S6Params::collect(nn::ParamList& out) {
  for (auto& sp : proj) {
    out.params.push_back(&sp.x_proj);
    out.params.push_back(&sp.dt_weight);
    out.params.push_back(&sp.dt_bias);
  }
  out.params.push_back(&A_log);
  out.params.push_back(&D);
}

namespace {

struct Projected {
  Tensor delta, B, C;
};

Projected project(const Tensor& x, const ScanProjection& sp, std::int64_t dt_rank,
                  std::int64_t d_state) {
  const Tensor xdbl = nn::linear(x, use(sp.x_proj), Tensor());
  const std::int64_t last = x.dim() - 1;
  const Tensor dt = slice(xdbl, last, 0, dt_rank);
  Projected out;
  out.B = slice(xdbl, last, dt_rank, d_state);
  out.C = slice(xdbl, last, dt_rank + d_state, d_state);
  out.delta = softplus(nn::linear(dt, use(sp.dt_weight), use(sp.dt_bias)));
  return out;
}

}  // namespace

Tensor selective_scan(const Tensor& x_seq, const S6Params& p) {
  const bool single = x_seq.dim() == 2;
  const Tensor x = single ? reshape(x_seq, {1, x_seq.shape()[0], x_seq.shape()[1]}) : x_seq;
  if (x.dim() != 3 || x.shape()[2] != p.d_inner) {
    fail(Errc::ShapeMismatch, "selective_scan expects [..., L, " + std::to_string(p.d_inner) +
                                  "], got " + to_string(x_seq.shape()));
  }
  const std::int64_t S = x.shape()[0], L = x.shape()[1];
  if (S % p.groups != 0) fail(Errc::ShapeMismatch, "sequence count not a multiple of groups");

  Projected pr;
  if (p.proj.size() == 1) {
    pr = project(x, p.proj[0], p.dt_rank, p.d_state);
  } else {
    // Per-direction projections: sequences are laid out [S/G, G, L, d].
    const Tensor grouped = reshape(x, {S / p.groups, p.groups, L, p.d_inner});
    std::vector<Tensor> ds, bs, cs;
    for (std::int64_t g = 0; g < p.groups; ++g) {
      const Projected part = project(slice(grouped, 1, g, 1), p.proj[g], p.dt_rank, p.d_state);
      ds.push_back(part.delta);
      bs.push_back(part.B);
      cs.push_back(part.C);
    }
    pr.delta = reshape(concat(ds, 1), {S, L, p.d_inner});
    pr.B = reshape(concat(bs, 1), {S, L, p.d_state});
    pr.C = reshape(concat(cs, 1), {S, L, p.d_state});
  }
  const Tensor A = neg(exp(use(p.A_log)));
  const Tensor y = selective_scan_core(x, pr.delta, A, pr.B, pr.C, use(p.D));
  return single ? reshape(y, x_seq.shape()) : y;
}

}  // namespace acm::ssm
