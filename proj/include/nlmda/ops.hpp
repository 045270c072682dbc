#pragma once

#include <functional>
#include <vector>

#include "nlmda/tensor.hpp"

namespace nlmda {

enum class Padding { valid, same };
enum class Mode { train, eval };

// out[b,h,ch,t] = sum_d x[b,d,ch,t] * c[h,d,ch]
// x: [B,Din,C,T], c: [D,Din,C] -> [B,D,C,T]
Tensor contract_expand(const Tensor& x, const Tensor& c);

// cross-correlation (no kernel flip); `same` pads with zeros, extra on the
// high side when the total pad is odd
// input: [B,Din,H,W], weight: [Dout,Din,Kh,Kw], bias: [Dout]
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Padding padding);

// conv2d(valid) of the depth-rank-1 tensor s*x with factored operands:
// equals conv2d(mul_broadcast(s, x), weight, bias, valid) without ever
// materializing the product. s: [B,D,C,1], x: [B,1,C,T],
// weight: [K,D,1,J], bias: [K] -> [B,K,C,T-J+1]
Tensor rank1_time_conv(const Tensor& s, const Tensor& x, const Tensor& weight,
                       const Tensor& bias);

Tensor tanh_op(const Tensor& x);

// exact Gaussian-CDF form x * Phi(x)
Tensor gelu_op(const Tensor& x);

// slices along `axis` sum to 1; max-subtracted for stability
Tensor softmax_axis(const Tensor& x, std::size_t axis);

// x: [B,D,H,W]; normalizes per depth channel over (B,H,W) in train mode and
// updates running stats in place (momentum 0.1, unbiased running variance);
// eval mode uses running stats only. gamma/beta/running stats: [D].
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, Mode mode,
                  double eps = 1e-5, double momentum = 0.1);

// non-overlapping mean pooling, stride = window, partial windows dropped
Tensor avg_pool(const Tensor& x, std::size_t wh, std::size_t ww);

// x: [B,N], weight: [M,N], bias: [M] or nullptr -> [B,M]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias);

// strict same-shape elementwise product
Tensor hadamard(const Tensor& a, const Tensor& b);

// elementwise with numpy-style broadcasting (ranks <= 4; extents must match
// or be 1); gradients reduce over the broadcast axes
Tensor mul_broadcast(const Tensor& a, const Tensor& b);
Tensor add_broadcast(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);

// replicate the first/last slice along `axis` lo/hi times
Tensor pad_edge(const Tensor& x, std::size_t axis, std::size_t lo,
                std::size_t hi);
Tensor scale(const Tensor& x, double factor);
Tensor sum_all(const Tensor& x);

// mean over the batch of -log softmax(logits)[label]; labels in [0,K)
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Collects reverse-mode gradients of f over `params` (one fresh tape), then
// compares against central finite differences with the given step. Returns
// max over coordinates of |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
// Must be called with no tape active.
double gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> params,
                 double step = 1e-5);

}  // namespace nlmda
