#include <cstddef>
#include <memory>
#include <vector>

#include "internal.hpp"
#include "nlmda/ops.hpp"

namespace nlmda {

namespace {

// col is [Din*Kh*Kw x Ho*Wo]; out-of-range taps read zero
void im2col(const double* in, std::size_t Din, std::size_t H, std::size_t W,
            std::size_t Kh, std::size_t Kw, std::ptrdiff_t ph,
            std::ptrdiff_t pw, std::size_t Ho, std::size_t Wo, double* col) {
  std::size_t k = 0;
  for (std::size_t din = 0; din < Din; ++din) {
    for (std::size_t kh = 0; kh < Kh; ++kh) {
      for (std::size_t kw = 0; kw < Kw; ++kw, ++k) {
        double* dst = col + k * Ho * Wo;
        for (std::size_t ho = 0; ho < Ho; ++ho) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(ho + kh) - ph;
          double* drow = dst + ho * Wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
            for (std::size_t wo = 0; wo < Wo; ++wo) drow[wo] = 0.0;
            continue;
          }
          const double* srow = in + (din * H + ih) * W;
          for (std::size_t wo = 0; wo < Wo; ++wo) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(wo + kw) - pw;
            drow[wo] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W))
                           ? 0.0
                           : srow[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t Din, std::size_t H,
                std::size_t W, std::size_t Kh, std::size_t Kw,
                std::ptrdiff_t ph, std::ptrdiff_t pw, std::size_t Ho,
                std::size_t Wo, double* din_grad) {
  std::size_t k = 0;
  for (std::size_t din = 0; din < Din; ++din) {
    for (std::size_t kh = 0; kh < Kh; ++kh) {
      for (std::size_t kw = 0; kw < Kw; ++kw, ++k) {
        const double* src = col + k * Ho * Wo;
        for (std::size_t ho = 0; ho < Ho; ++ho) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(ho + kh) - ph;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          double* drow = din_grad + (din * H + ih) * W;
          const double* srow = src + ho * Wo;
          for (std::size_t wo = 0; wo < Wo; ++wo) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(wo + kw) - pw;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
            drow[iw] += srow[wo];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor contract_expand(const Tensor& x, const Tensor& c) {
  check(x.rank() == 4, "contract_expand: x must be [B,Din,C,T], got " +
                           shape_str(x.shape()));
  check(c.rank() == 3, "contract_expand: c must be [D,Din,C], got " +
                           shape_str(c.shape()));
  const std::size_t B = x.extent(0), Din = x.extent(1), C = x.extent(2),
                    T = x.extent(3);
  const std::size_t D = c.extent(0);
  check(c.extent(1) == Din,
        "contract_expand: depth mismatch: x has Din=" + std::to_string(Din) +
            ", c has Din=" + std::to_string(c.extent(1)));
  check(c.extent(2) == C,
        "contract_expand: channel mismatch: x has C=" + std::to_string(C) +
            ", c has C=" + std::to_string(c.extent(2)));

  Tensor out = Tensor::zeros({B, D, C, T});
  const double* px = x.data();
  const double* pc = c.data();
  double* po = out.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < D; ++h) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        double* orow = po + ((b * D + h) * C + ch) * T;
        for (std::size_t d = 0; d < Din; ++d) {
          const double w = pc[(h * Din + d) * C + ch];
          const double* xrow = px + ((b * Din + d) * C + ch) * T;
          for (std::size_t t = 0; t < T; ++t) orow[t] += w * xrow[t];
        }
      }
    }
  }
  detail::debug_check_finite(po, out.numel(), "contract_expand");

  if (grad_enabled({&x, &c})) {
    out.set_requires_grad(true);
    Tensor xc = x, cc = c, oc = out;
    out.set_node_id(Tape::active()->record(
        "contract_expand", [xc, cc, oc, B, D, Din, C, T]() mutable {
          if (!oc.has_grad()) return;
          const double* g = oc.grad().data();
          if (xc.requires_grad()) {
            double* dx = xc.grad().data();
            const double* pc2 = cc.data();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t h = 0; h < D; ++h)
                for (std::size_t ch = 0; ch < C; ++ch) {
                  const double* grow = g + ((b * D + h) * C + ch) * T;
                  for (std::size_t d = 0; d < Din; ++d) {
                    const double w = pc2[(h * Din + d) * C + ch];
                    double* dxrow = dx + ((b * Din + d) * C + ch) * T;
                    for (std::size_t t = 0; t < T; ++t)
                      dxrow[t] += w * grow[t];
                  }
                }
          }
          if (cc.requires_grad()) {
            double* dc = cc.grad().data();
            const double* px2 = xc.data();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t h = 0; h < D; ++h)
                for (std::size_t ch = 0; ch < C; ++ch) {
                  const double* grow = g + ((b * D + h) * C + ch) * T;
                  for (std::size_t d = 0; d < Din; ++d) {
                    const double* xrow = px2 + ((b * Din + d) * C + ch) * T;
                    double acc = 0.0;
                    for (std::size_t t = 0; t < T; ++t)
                      acc += grow[t] * xrow[t];
                    dc[(h * Din + d) * C + ch] += acc;
                  }
                }
          }
        }));
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Padding padding) {
  check(input.rank() == 4, "conv2d: input must be [B,Din,H,W], got " +
                               shape_str(input.shape()));
  check(weight.rank() == 4, "conv2d: weight must be [Dout,Din,Kh,Kw], got " +
                                shape_str(weight.shape()));
  const std::size_t B = input.extent(0), Din = input.extent(1),
                    H = input.extent(2), W = input.extent(3);
  const std::size_t Dout = weight.extent(0), Kh = weight.extent(2),
                    Kw = weight.extent(3);
  check(weight.extent(1) == Din,
        "conv2d: weight depth " + std::to_string(weight.extent(1)) +
            " does not match input depth " + std::to_string(Din));
  check(bias.numel() == Dout, "conv2d: bias size " +
                                  std::to_string(bias.numel()) +
                                  " != output depth " + std::to_string(Dout));

  std::ptrdiff_t ph = 0, pw = 0;
  std::size_t Ho, Wo;
  if (padding == Padding::valid) {
    check(Kh <= H && Kw <= W,
          "conv2d: kernel (" + std::to_string(Kh) + "," + std::to_string(Kw) +
              ") larger than input (" + std::to_string(H) + "," +
              std::to_string(W) + ") with valid padding");
    Ho = H - Kh + 1;
    Wo = W - Kw + 1;
  } else {
    Ho = H;
    Wo = W;
    ph = static_cast<std::ptrdiff_t>((Kh - 1) / 2);  // extra pad on high side
    pw = static_cast<std::ptrdiff_t>((Kw - 1) / 2);
  }
  const std::size_t K = Din * Kh * Kw;
  const std::size_t No = Ho * Wo;

  Tensor out = Tensor::zeros({B, Dout, Ho, Wo});
  {
    std::vector<double> col(K * No);
    for (std::size_t b = 0; b < B; ++b) {
      im2col(input.data() + b * Din * H * W, Din, H, W, Kh, Kw, ph, pw, Ho, Wo,
             col.data());
      double* ob = out.data() + b * Dout * No;
      detail::gemm(false, false, Dout, No, K, 1.0, weight.data(), K,
                   col.data(), No, 0.0, ob, No);
      const double* pb = bias.data();
      for (std::size_t d = 0; d < Dout; ++d)
        for (std::size_t i = 0; i < No; ++i) ob[d * No + i] += pb[d];
    }
  }
  detail::debug_check_finite(out.data(), out.numel(), "conv2d");

  if (grad_enabled({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    Tensor ic = input, wc = weight, bc = bias, oc = out;
    out.set_node_id(Tape::active()->record(
        "conv2d",
        [ic, wc, bc, oc, B, Din, H, W, Dout, Kh, Kw, ph, pw, Ho, Wo, K,
         No]() mutable {
          if (!oc.has_grad()) return;
          const double* g = oc.grad().data();
          if (bc.requires_grad()) {
            double* db = bc.grad().data();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t d = 0; d < Dout; ++d) {
                const double* grow = g + (b * Dout + d) * No;
                double acc = 0.0;
                for (std::size_t i = 0; i < No; ++i) acc += grow[i];
                db[d] += acc;
              }
          }
          const bool need_dw = wc.requires_grad();
          const bool need_dx = ic.requires_grad();
          if (!need_dw && !need_dx) return;
          std::vector<double> col(K * No);
          std::vector<double> dcol(need_dx ? K * No : 0);
          for (std::size_t b = 0; b < B; ++b) {
            const double* gb = g + b * Dout * No;
            if (need_dw) {
              im2col(ic.data() + b * Din * H * W, Din, H, W, Kh, Kw, ph, pw,
                     Ho, Wo, col.data());
              detail::gemm(false, true, Dout, K, No, 1.0, gb, No, col.data(),
                           No, 1.0, wc.grad().data(), K);
            }
            if (need_dx) {
              detail::gemm(true, false, K, No, Dout, 1.0, wc.data(), K, gb,
                           No, 0.0, dcol.data(), No);
              col2im_add(dcol.data(), Din, H, W, Kh, Kw, ph, pw, Ho, Wo,
                         ic.grad().data() + b * Din * H * W);
            }
          }
        }));
  }
  return out;
}

Tensor rank1_time_conv(const Tensor& s, const Tensor& x, const Tensor& weight,
                       const Tensor& bias) {
  check(s.rank() == 4 && s.extent(3) == 1,
        "rank1_time_conv: s must be [B,D,C,1], got " + shape_str(s.shape()));
  check(x.rank() == 4 && x.extent(1) == 1,
        "rank1_time_conv: x must be [B,1,C,T], got " + shape_str(x.shape()));
  check(weight.rank() == 4 && weight.extent(2) == 1,
        "rank1_time_conv: weight must be [K,D,1,J], got " +
            shape_str(weight.shape()));
  const std::size_t B = s.extent(0), D = s.extent(1), C = s.extent(2);
  const std::size_t T = x.extent(3);
  const std::size_t K = weight.extent(0), J = weight.extent(3);
  check(x.extent(0) == B && x.extent(2) == C,
        "rank1_time_conv: s " + shape_str(s.shape()) + " and x " +
            shape_str(x.shape()) + " disagree");
  check(weight.extent(1) == D, "rank1_time_conv: weight depth mismatch");
  check(J <= T, "rank1_time_conv: kernel length " + std::to_string(J) +
                    " larger than time axis " + std::to_string(T));
  check(bias.numel() == K, "rank1_time_conv: bias size mismatch");
  const std::size_t To = T - J + 1;

  // V[b,k,ch,j] = sum_h weight[k,h,0,j] * s[b,h,ch]
  auto V = std::make_shared<std::vector<double>>(B * K * C * J, 0.0);
  const double* pw = weight.data();
  const double* ps = s.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t h = 0; h < D; ++h) {
        const double* wrow = pw + (k * D + h) * J;
        const double* srow = ps + (b * D + h) * C;
        for (std::size_t ch = 0; ch < C; ++ch) {
          const double sv = srow[ch];
          double* vrow = V->data() + ((b * K + k) * C + ch) * J;
          for (std::size_t j = 0; j < J; ++j) vrow[j] += wrow[j] * sv;
        }
      }
    }
  }

  Tensor out = Tensor::zeros({B, K, C, To});
  const double* px = x.data();
  const double* pb = bias.data();
  double* po = out.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double* vrow = V->data() + ((b * K + k) * C + ch) * J;
        const double* xrow = px + (b * C + ch) * T;
        double* orow = po + ((b * K + k) * C + ch) * To;
        const double bv = pb[k];
        for (std::size_t t = 0; t < To; ++t) {
          double acc = 0.0;
          for (std::size_t j = 0; j < J; ++j) acc += vrow[j] * xrow[t + j];
          orow[t] = acc + bv;
        }
      }
    }
  }
  detail::debug_check_finite(po, out.numel(), "rank1_time_conv");

  if (grad_enabled({&s, &x, &weight, &bias})) {
    out.set_requires_grad(true);
    Tensor sc = s, xcap = x, wc = weight, bc = bias, oc = out;
    out.set_node_id(Tape::active()->record(
        "rank1_time_conv",
        [sc, xcap, wc, bc, oc, V, B, D, C, T, K, J, To]() mutable {
          if (!oc.has_grad()) return;
          const double* g = oc.grad().data();
          if (bc.requires_grad()) {
            double* db = bc.grad().data();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t k = 0; k < K; ++k) {
                const double* grow = g + (b * K + k) * C * To;
                double acc = 0.0;
                for (std::size_t i = 0; i < C * To; ++i) acc += grow[i];
                db[k] += acc;
              }
          }
          const bool need_dw = wc.requires_grad();
          const bool need_ds = sc.requires_grad();
          if (need_dw || need_ds) {
            // dV[b,k,ch,j] = sum_t g[b,k,ch,t] * x[b,ch,t+j]
            std::vector<double> dV(B * K * C * J, 0.0);
            const double* px2 = xcap.data();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t k = 0; k < K; ++k)
                for (std::size_t ch = 0; ch < C; ++ch) {
                  const double* grow = g + ((b * K + k) * C + ch) * To;
                  const double* xrow = px2 + (b * C + ch) * T;
                  double* dvrow = dV.data() + ((b * K + k) * C + ch) * J;
                  for (std::size_t j = 0; j < J; ++j) {
                    double acc = 0.0;
                    for (std::size_t t = 0; t < To; ++t)
                      acc += grow[t] * xrow[t + j];
                    dvrow[j] = acc;
                  }
                }
            if (need_dw) {
              double* dw = wc.grad().data();
              const double* ps2 = sc.data();
              for (std::size_t b = 0; b < B; ++b)
                for (std::size_t k = 0; k < K; ++k)
                  for (std::size_t h = 0; h < D; ++h) {
                    double* dwrow = dw + (k * D + h) * J;
                    const double* srow = ps2 + (b * D + h) * C;
                    for (std::size_t ch = 0; ch < C; ++ch) {
                      const double sv = srow[ch];
                      const double* dvrow =
                          dV.data() + ((b * K + k) * C + ch) * J;
                      for (std::size_t j = 0; j < J; ++j)
                        dwrow[j] += dvrow[j] * sv;
                    }
                  }
            }
            if (need_ds) {
              double* ds = sc.grad().data();
              const double* pw2 = wc.data();
              for (std::size_t b = 0; b < B; ++b)
                for (std::size_t k = 0; k < K; ++k)
                  for (std::size_t h = 0; h < D; ++h) {
                    const double* wrow = pw2 + (k * D + h) * J;
                    double* dsrow = ds + (b * D + h) * C;
                    for (std::size_t ch = 0; ch < C; ++ch) {
                      const double* dvrow =
                          dV.data() + ((b * K + k) * C + ch) * J;
                      double acc = 0.0;
                      for (std::size_t j = 0; j < J; ++j)
                        acc += wrow[j] * dvrow[j];
                      dsrow[ch] += acc;
                    }
                  }
            }
          }
          if (xcap.requires_grad()) {
            double* dx = xcap.grad().data();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t k = 0; k < K; ++k)
                for (std::size_t ch = 0; ch < C; ++ch) {
                  const double* vrow = V->data() + ((b * K + k) * C + ch) * J;
                  const double* grow = g + ((b * K + k) * C + ch) * To;
                  double* dxrow = dx + (b * C + ch) * T;
                  for (std::size_t t = 0; t < To; ++t)
                    for (std::size_t j = 0; j < J; ++j)
                      dxrow[t + j] += vrow[j] * grow[t];
                }
          }
        }));
  }
  return out;
}

Tensor avg_pool(const Tensor& x, std::size_t wh, std::size_t ww) {
  check(x.rank() == 4, "avg_pool: input must be [B,D,H,W], got " +
                           shape_str(x.shape()));
  check(wh >= 1 && ww >= 1, "avg_pool: window extents must be positive");
  const std::size_t B = x.extent(0), D = x.extent(1), H = x.extent(2),
                    W = x.extent(3);
  check(wh <= H && ww <= W,
        "avg_pool: window (" + std::to_string(wh) + "," + std::to_string(ww) +
            ") larger than input (" + std::to_string(H) + "," +
            std::to_string(W) + ")");
  const std::size_t Ho = H / wh, Wo = W / ww;
  const double inv = 1.0 / static_cast<double>(wh * ww);

  Tensor out = Tensor::zeros({B, D, Ho, Wo});
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t bd = 0; bd < B * D; ++bd) {
    const double* plane = px + bd * H * W;
    double* oplane = po + bd * Ho * Wo;
    for (std::size_t ho = 0; ho < Ho; ++ho) {
      for (std::size_t wo = 0; wo < Wo; ++wo) {
        double acc = 0.0;
        for (std::size_t i = 0; i < wh; ++i) {
          const double* row = plane + (ho * wh + i) * W + wo * ww;
          for (std::size_t j = 0; j < ww; ++j) acc += row[j];
        }
        oplane[ho * Wo + wo] = acc * inv;
      }
    }
  }
  detail::debug_check_finite(po, out.numel(), "avg_pool");

  if (grad_enabled({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    out.set_node_id(Tape::active()->record(
        "avg_pool", [xc, oc, B, D, H, W, Ho, Wo, wh, ww, inv]() mutable {
          if (!oc.has_grad()) return;
          const double* g = oc.grad().data();
          double* dx = xc.grad().data();
          for (std::size_t bd = 0; bd < B * D; ++bd) {
            const double* gplane = g + bd * Ho * Wo;
            double* dplane = dx + bd * H * W;
            for (std::size_t ho = 0; ho < Ho; ++ho)
              for (std::size_t wo = 0; wo < Wo; ++wo) {
                const double gv = gplane[ho * Wo + wo] * inv;
                for (std::size_t i = 0; i < wh; ++i) {
                  double* row = dplane + (ho * wh + i) * W + wo * ww;
                  for (std::size_t j = 0; j < ww; ++j) row[j] += gv;
                }
              }
          }
        }));
  }
  return out;
}

}  // namespace nlmda
