#include "nlmda/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "internal.hpp"

namespace nlmda {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gauss_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
double gauss_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

// Padded-to-rank-4 broadcast plan: output extents plus element strides for
// both operands (0 on broadcast axes).
struct BroadcastPlan {
  std::size_t ext[4];
  std::size_t sa[4];
  std::size_t sb[4];
  Shape out_shape;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  check(a.size() <= 4 && b.size() <= 4,
        std::string(op) + ": rank > 4 not supported");
  std::size_t ea[4] = {1, 1, 1, 1};
  std::size_t eb[4] = {1, 1, 1, 1};
  for (std::size_t i = 0; i < a.size(); ++i) ea[4 - a.size() + i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) eb[4 - b.size() + i] = b[i];

  BroadcastPlan p;
  for (int i = 0; i < 4; ++i) {
    check(ea[i] == eb[i] || ea[i] == 1 || eb[i] == 1,
          std::string(op) + ": shapes " + shape_str(a) + " and " +
              shape_str(b) + " do not broadcast");
    p.ext[i] = std::max(ea[i], eb[i]);
  }
  std::size_t stri_a = 1, stri_b = 1;
  for (int i = 3; i >= 0; --i) {
    p.sa[i] = (ea[i] == 1) ? 0 : stri_a;
    p.sb[i] = (eb[i] == 1) ? 0 : stri_b;
    stri_a *= ea[i];
    stri_b *= eb[i];
  }
  const std::size_t out_rank = std::max(a.size(), b.size());
  p.out_shape.assign(p.ext + (4 - out_rank), p.ext + 4);
  if (p.out_shape.empty()) p.out_shape = {1};
  return p;
}

template <typename Fn>
void broadcast_loop(const BroadcastPlan& p, const double* a, const double* b,
                    Fn&& fn) {
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < p.ext[0]; ++i0)
    for (std::size_t i1 = 0; i1 < p.ext[1]; ++i1)
      for (std::size_t i2 = 0; i2 < p.ext[2]; ++i2) {
        const double* pa =
            a + i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2];
        const double* pb =
            b + i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2];
        for (std::size_t i3 = 0; i3 < p.ext[3]; ++i3, ++o) {
          fn(o, pa + i3 * p.sa[3] - a, pb + i3 * p.sb[3] - b);
        }
      }
}

enum class BinKind { mul, add };

Tensor binary_broadcast(const Tensor& a, const Tensor& b, BinKind kind,
                        const char* name) {
  BroadcastPlan p = plan_broadcast(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(p.out_shape);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  if (kind == BinKind::mul) {
    broadcast_loop(p, pa, pb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      po[o] = pa[ia] * pb[ib];
    });
  } else {
    broadcast_loop(p, pa, pb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      po[o] = pa[ia] + pb[ib];
    });
  }
  detail::debug_check_finite(po, out.numel(), name);

  if (grad_enabled({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    out.set_node_id(Tape::active()->record(name, [ac, bc, oc, p, kind]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      if (ac.requires_grad()) {
        double* da = ac.grad().data();
        const double* pb2 = bc.data();
        if (kind == BinKind::mul) {
          broadcast_loop(p, ac.data(), pb2,
                         [&](std::size_t o, std::size_t ia, std::size_t ib) {
                           da[ia] += g[o] * pb2[ib];
                         });
        } else {
          broadcast_loop(p, ac.data(), pb2,
                         [&](std::size_t o, std::size_t ia, std::size_t ib) {
                           (void)ib;
                           da[ia] += g[o];
                         });
        }
      }
      if (bc.requires_grad()) {
        double* db = bc.grad().data();
        const double* pa2 = ac.data();
        if (kind == BinKind::mul) {
          broadcast_loop(p, pa2, bc.data(),
                         [&](std::size_t o, std::size_t ia, std::size_t ib) {
                           db[ib] += g[o] * pa2[ia];
                         });
        } else {
          broadcast_loop(p, pa2, bc.data(),
                         [&](std::size_t o, std::size_t ia, std::size_t ib) {
                           (void)ia;
                           db[ib] += g[o];
                         });
        }
      }
    }));
  }
  return out;
}

}  // namespace

Tensor tanh_op(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i) po[i] = std::tanh(px[i]);
  detail::debug_check_finite(po, out.numel(), "tanh");

  if (grad_enabled({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    out.set_node_id(Tape::active()->record("tanh", [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      const double* y = oc.data();
      double* dx = xc.grad().data();
      for (std::size_t i = 0; i < xc.numel(); ++i)
        dx[i] += g[i] * (1.0 - y[i] * y[i]);
    }));
  }
  return out;
}

Tensor gelu_op(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i) po[i] = px[i] * gauss_cdf(px[i]);
  detail::debug_check_finite(po, out.numel(), "gelu");

  if (grad_enabled({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    out.set_node_id(Tape::active()->record("gelu", [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      const double* px2 = xc.data();
      double* dx = xc.grad().data();
      for (std::size_t i = 0; i < xc.numel(); ++i) {
        const double v = px2[i];
        dx[i] += g[i] * (gauss_cdf(v) + v * gauss_pdf(v));
      }
    }));
  }
  return out;
}

Tensor softmax_axis(const Tensor& x, std::size_t axis) {
  check(axis < x.rank(), "softmax_axis: axis " + std::to_string(axis) +
                             " out of range for " + shape_str(x.shape()));
  const Shape& sh = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  const std::size_t n = sh[axis];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];

  Tensor out = Tensor::zeros(sh);
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double m = px[base];
      for (std::size_t j = 1; j < n; ++j)
        m = std::max(m, px[base + j * inner]);
      double denom = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(px[base + j * inner] - m);
        po[base + j * inner] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < n; ++j) po[base + j * inner] /= denom;
    }
  }
  detail::debug_check_finite(po, out.numel(), "softmax_axis");

  if (grad_enabled({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    out.set_node_id(
        Tape::active()->record("softmax_axis", [xc, oc, outer, n, inner]() mutable {
          if (!oc.has_grad()) return;
          const double* g = oc.grad().data();
          const double* y = oc.data();
          double* dx = xc.grad().data();
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t base = o * n * inner + i;
              double dot = 0.0;
              for (std::size_t j = 0; j < n; ++j)
                dot += g[base + j * inner] * y[base + j * inner];
              for (std::size_t j = 0; j < n; ++j) {
                const std::size_t k = base + j * inner;
                dx[k] += y[k] * (g[k] - dot);
              }
            }
          }
        }));
  }
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, Mode mode,
                  double eps, double momentum) {
  check(x.rank() == 4, "batch_norm: expected rank-4 input, got " +
                           shape_str(x.shape()));
  const std::size_t B = x.extent(0), D = x.extent(1), H = x.extent(2),
                    W = x.extent(3);
  check(gamma.numel() == D && beta.numel() == D && running_mean.numel() == D &&
            running_var.numel() == D,
        "batch_norm: per-channel parameter size mismatch with depth " +
            std::to_string(D));
  const std::size_t plane = H * W;
  const std::size_t n = B * plane;

  std::vector<double> mean(D), invstd(D);
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  const double* px = x.data();

  if (mode == Mode::train) {
    check(B >= 2, "batch_norm: train mode requires batch size >= 2, got " +
                      std::to_string(B));
    for (std::size_t d = 0; d < D; ++d) {
      double mu = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = px + (b * D + d) * plane;
        for (std::size_t i = 0; i < plane; ++i) mu += p[i];
      }
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = px + (b * D + d) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double c = p[i] - mu;
          var += c * c;
        }
      }
      var /= static_cast<double>(n);
      mean[d] = mu;
      invstd[d] = 1.0 / std::sqrt(var + eps);
      const double unbiased =
          var * static_cast<double>(n) / static_cast<double>(n - 1);
      running_mean.data()[d] =
          (1.0 - momentum) * running_mean.data()[d] + momentum * mu;
      running_var.data()[d] =
          (1.0 - momentum) * running_var.data()[d] + momentum * unbiased;
    }
  } else {
    for (std::size_t d = 0; d < D; ++d) {
      mean[d] = running_mean.data()[d];
      invstd[d] = 1.0 / std::sqrt(running_var.data()[d] + eps);
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  double* po = out.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t d = 0; d < D; ++d) {
      const double* p = px + (b * D + d) * plane;
      double* q = po + (b * D + d) * plane;
      double* h = xhat->data() + (b * D + d) * plane;
      const double mu = mean[d], is = invstd[d], ga = pg[d], be = pb[d];
      for (std::size_t i = 0; i < plane; ++i) {
        h[i] = (p[i] - mu) * is;
        q[i] = ga * h[i] + be;
      }
    }
  }
  detail::debug_check_finite(po, out.numel(), "batch_norm");

  if (grad_enabled({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    auto saved_invstd = std::make_shared<std::vector<double>>(invstd);
    const bool train = (mode == Mode::train);
    out.set_node_id(Tape::active()->record(
        "batch_norm",
        [xc, gc, bc, oc, xhat, saved_invstd, B, D, plane, n, train]() mutable {
          if (!oc.has_grad()) return;
          const double* g = oc.grad().data();
          const double* h = xhat->data();
          if (gc.requires_grad()) {
            double* dg = gc.grad().data();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t d = 0; d < D; ++d) {
                const std::size_t off = (b * D + d) * plane;
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i)
                  acc += g[off + i] * h[off + i];
                dg[d] += acc;
              }
          }
          if (bc.requires_grad()) {
            double* db = bc.grad().data();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t d = 0; d < D; ++d) {
                const std::size_t off = (b * D + d) * plane;
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += g[off + i];
                db[d] += acc;
              }
          }
          if (!xc.requires_grad()) return;
          double* dx = xc.grad().data();
          const double* pg2 = gc.data();
          if (!train) {
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t d = 0; d < D; ++d) {
                const std::size_t off = (b * D + d) * plane;
                const double k = pg2[d] * (*saved_invstd)[d];
                for (std::size_t i = 0; i < plane; ++i)
                  dx[off + i] += k * g[off + i];
              }
            return;
          }
          for (std::size_t d = 0; d < D; ++d) {
            double sum_g = 0.0, sum_gh = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
              const std::size_t off = (b * D + d) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                sum_g += g[off + i];
                sum_gh += g[off + i] * h[off + i];
              }
            }
            const double mg = sum_g / static_cast<double>(n);
            const double mgh = sum_gh / static_cast<double>(n);
            const double k = pg2[d] * (*saved_invstd)[d];
            for (std::size_t b = 0; b < B; ++b) {
              const std::size_t off = (b * D + d) * plane;
              for (std::size_t i = 0; i < plane; ++i)
                dx[off + i] += k * (g[off + i] - mg - h[off + i] * mgh);
            }
          }
        }));
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  check(x.rank() == 2, "linear: input must be rank 2, got " +
                           shape_str(x.shape()));
  check(weight.rank() == 2, "linear: weight must be rank 2, got " +
                                shape_str(weight.shape()));
  const std::size_t B = x.extent(0), N = x.extent(1);
  const std::size_t M = weight.extent(0);
  check(weight.extent(1) == N,
        "linear: weight " + shape_str(weight.shape()) +
            " does not match input " + shape_str(x.shape()));
  if (bias != nullptr)
    check(bias->numel() == M, "linear: bias size " +
                                  std::to_string(bias->numel()) +
                                  " != output features " + std::to_string(M));

  Tensor out = Tensor::zeros({B, M});
  detail::gemm(false, true, B, M, N, 1.0, x.data(), N, weight.data(), N, 0.0,
               out.data(), M);
  if (bias != nullptr) {
    double* po = out.data();
    const double* pb = bias->data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t m = 0; m < M; ++m) po[b * M + m] += pb[m];
  }
  detail::debug_check_finite(out.data(), out.numel(), "linear");

  if (grad_enabled({&x, &weight, bias})) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = weight, oc = out;
    Tensor biasc = (bias != nullptr) ? *bias : Tensor();
    out.set_node_id(
        Tape::active()->record("linear", [xc, wc, biasc, oc, B, M, N]() mutable {
          if (!oc.has_grad()) return;
          const double* g = oc.grad().data();
          if (xc.requires_grad()) {
            detail::gemm(false, false, B, N, M, 1.0, g, M, wc.data(), N, 1.0,
                         xc.grad().data(), N);
          }
          if (wc.requires_grad()) {
            detail::gemm(true, false, M, N, B, 1.0, g, M, xc.data(), N, 1.0,
                         wc.grad().data(), N);
          }
          if (biasc.defined() && biasc.requires_grad()) {
            double* db = biasc.grad().data();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t m = 0; m < M; ++m) db[m] += g[b * M + m];
          }
        }));
  }
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "hadamard: shape mismatch " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  detail::debug_check_finite(po, out.numel(), "hadamard");

  if (grad_enabled({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    out.set_node_id(Tape::active()->record("hadamard", [ac, bc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      if (ac.requires_grad()) {
        double* da = ac.grad().data();
        const double* pb2 = bc.data();
        for (std::size_t i = 0; i < ac.numel(); ++i) da[i] += g[i] * pb2[i];
      }
      if (bc.requires_grad()) {
        double* db = bc.grad().data();
        const double* pa2 = ac.data();
        for (std::size_t i = 0; i < bc.numel(); ++i) db[i] += g[i] * pa2[i];
      }
    }));
  }
  return out;
}

Tensor mul_broadcast(const Tensor& a, const Tensor& b) {
  return binary_broadcast(a, b, BinKind::mul, "mul_broadcast");
}

Tensor add_broadcast(const Tensor& a, const Tensor& b) {
  return binary_broadcast(a, b, BinKind::add, "add_broadcast");
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  check(shape_numel(new_shape) == x.numel(),
        "reshape: cannot view " + shape_str(x.shape()) + " as " +
            shape_str(new_shape));
  Tensor out = Tensor::from_data(std::move(new_shape), x.vec());

  if (grad_enabled({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    out.set_node_id(Tape::active()->record("reshape", [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      double* dx = xc.grad().data();
      for (std::size_t i = 0; i < xc.numel(); ++i) dx[i] += g[i];
    }));
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  check(perm.size() == r, "permute: perm rank mismatch");
  std::vector<bool> seen(r, false);
  for (std::size_t p : perm) {
    check(p < r && !seen[p], "permute: invalid permutation");
    seen[p] = true;
  }
  const Shape& in_sh = x.shape();
  Shape out_sh(r);
  for (std::size_t i = 0; i < r; ++i) out_sh[i] = in_sh[perm[i]];

  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i > 0; --i)
    in_stride[i - 1] = in_stride[i] * in_sh[i];
  // stride of output axis i inside the input buffer
  std::vector<std::size_t> map_stride(r);
  for (std::size_t i = 0; i < r; ++i) map_stride[i] = in_stride[perm[i]];

  Tensor out = Tensor::zeros(out_sh);
  const double* px = x.data();
  double* po = out.data();
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < out.numel(); ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * map_stride[i];
    po[o] = px[src];
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_sh[i]) break;
      idx[i] = 0;
    }
  }

  if (grad_enabled({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    out.set_node_id(Tape::active()->record(
        "permute", [xc, oc, out_sh, map_stride, r]() mutable {
          if (!oc.has_grad()) return;
          const double* g = oc.grad().data();
          double* dx = xc.grad().data();
          std::vector<std::size_t> idx(r, 0);
          for (std::size_t o = 0; o < oc.numel(); ++o) {
            std::size_t src = 0;
            for (std::size_t i = 0; i < r; ++i) src += idx[i] * map_stride[i];
            dx[src] += g[o];
            for (std::size_t i = r; i-- > 0;) {
              if (++idx[i] < out_sh[i]) break;
              idx[i] = 0;
            }
          }
        }));
  }
  return out;
}

Tensor pad_edge(const Tensor& x, std::size_t axis, std::size_t lo,
                std::size_t hi) {
  check(axis < x.rank(), "pad_edge: axis out of range");
  const Shape& sh = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  const std::size_t n = sh[axis];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
  const std::size_t m = n + lo + hi;

  Shape out_sh = sh;
  out_sh[axis] = m;
  Tensor out = Tensor::zeros(out_sh);
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = px + o * n * inner;
    double* dst = po + o * m * inner;
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t sj = j < lo ? 0 : (j - lo >= n ? n - 1 : j - lo);
      const double* s = src + sj * inner;
      double* d = dst + j * inner;
      for (std::size_t i = 0; i < inner; ++i) d[i] = s[i];
    }
  }

  if (grad_enabled({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    out.set_node_id(Tape::active()->record(
        "pad_edge", [xc, oc, outer, n, inner, lo, m]() mutable {
          if (!oc.has_grad()) return;
          const double* g = oc.grad().data();
          double* dx = xc.grad().data();
          for (std::size_t o = 0; o < outer; ++o) {
            const double* gs = g + o * m * inner;
            double* ds = dx + o * n * inner;
            for (std::size_t j = 0; j < m; ++j) {
              const std::size_t sj =
                  j < lo ? 0 : (j - lo >= n ? n - 1 : j - lo);
              const double* gr = gs + j * inner;
              double* dr = ds + sj * inner;
              for (std::size_t i = 0; i < inner; ++i) dr[i] += gr[i];
            }
          }
        }));
  }
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i) po[i] = factor * px[i];
  detail::debug_check_finite(po, out.numel(), "scale");

  if (grad_enabled({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    out.set_node_id(Tape::active()->record("scale", [xc, oc, factor]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      double* dx = xc.grad().data();
      for (std::size_t i = 0; i < xc.numel(); ++i) dx[i] += factor * g[i];
    }));
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  const double* px = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
  Tensor out = Tensor::scalar(acc);

  if (grad_enabled({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    out.set_node_id(Tape::active()->record("sum_all", [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double g = oc.grad()[0];
      double* dx = xc.grad().data();
      for (std::size_t i = 0; i < xc.numel(); ++i) dx[i] += g;
    }));
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check(logits.rank() == 2, "cross_entropy: logits must be rank 2, got " +
                                shape_str(logits.shape()));
  const std::size_t B = logits.extent(0), K = logits.extent(1);
  check(labels.size() == B, "cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch " + std::to_string(B));
  for (int l : labels)
    check(l >= 0 && static_cast<std::size_t>(l) < K,
          "cross_entropy: label " + std::to_string(l) + " outside [0," +
              std::to_string(K) + ")");

  auto probs = std::make_shared<std::vector<double>>(B * K);
  const double* pl = logits.data();
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = pl + b * K;
    double m = row[0];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, row[k]);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(row[k] - m);
    const double lse = m + std::log(denom);
    for (std::size_t k = 0; k < K; ++k)
      (*probs)[b * K + k] = std::exp(row[k] - lse);
    loss += lse - row[labels[b]];
  }
  loss /= static_cast<double>(B);
  Tensor out = Tensor::scalar(loss);
  detail::debug_check_finite(out.data(), 1, "cross_entropy");

  if (grad_enabled({&logits})) {
    out.set_requires_grad(true);
    Tensor lc = logits, oc = out;
    out.set_node_id(Tape::active()->record(
        "cross_entropy", [lc, oc, probs, labels, B, K]() mutable {
          if (!oc.has_grad()) return;
          const double g = oc.grad()[0] / static_cast<double>(B);
          double* dl = lc.grad().data();
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t k = 0; k < K; ++k)
              dl[b * K + k] += g * (*probs)[b * K + k];
            dl[b * K + labels[b]] -= g;
          }
        }));
  }
  return out;
}

double gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> params,
                 double step) {
  check(Tape::active() == nullptr, "gradcheck: must run with no active tape");
  for (Tensor& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  std::vector<std::vector<double>> g_ad;
  {
    Tape tape;
    Tensor loss = f();
    check(loss.numel() == 1, "gradcheck: f must return a scalar");
    tape.backward(loss);
  }
  for (Tensor& p : params) {
    g_ad.push_back(p.has_grad() ? p.grad()
                                : std::vector<double>(p.numel(), 0.0));
  }

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + step;
      const double fp = f().value();
      p.data()[i] = orig - step;
      const double fm = f().value();
      p.data()[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double ad = g_ad[pi][i];
      const double rel =
          std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace nlmda
