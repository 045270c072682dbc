#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlmda/ops.hpp"
#include "nlmda/tensor.hpp"

namespace nlmda {

// k = max(1, floor(f/10/N)) with N = max(1, floor(N_t/200))
int compute_k_pooling(int sample_rate_hz, long long n_train);

struct ModelConfig {
  int channels = 17;          // C, EEG electrodes
  int samples = 200;          // T, time samples per epoch
  int depth = 9;              // D, channel-attention depth expansion
  int temporal_kernels = 12;  // temporal conv output maps
  int temporal_len = 9;       // temporal kernel taps
  int spatial_kernels = 7;    // spatial conv output maps
  int depth_attn_kernel = 7;  // cross-depth interaction taps
  int attn_hidden = 16;       // H, score-MLP width
  int n_classes = 2;
  int sample_rate = 200;      // f, Hz
  long long n_train = 28497;  // training-sample count, drives k_pooling
  bool use_batchnorm = true;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument

  int k_pooling() const { return compute_k_pooling(sample_rate, n_train); }
  int conv_time() const { return samples - temporal_len + 1; }
  int pooled_time() const { return conv_time() / k_pooling(); }
  int flat_features() const { return spatial_kernels * pooled_time(); }
};

struct ModelParams {
  Tensor c;                       // [D,1,C], channel attention
  Tensor w1, b1, w2;              // [H,T], [H], [1,H], score MLP
  Tensor temporal_w, temporal_b;  // [K,D,1,J], [K]
  Tensor depth_w, depth_b;        // [1,1,Kd,1], [1], cross-depth conv
  Tensor spatial_w, spatial_b;    // [S,K,C,1], [S]
  Tensor bn1_gamma, bn1_beta, bn1_mean, bn1_var;  // undefined when BN off
  Tensor bn2_gamma, bn2_beta, bn2_mean, bn2_var;
  Tensor fc_w, fc_b;              // [n_classes, feat], [n_classes]

  // fixed order; batch-norm running stats are state, not trainables
  std::vector<Tensor*> trainable();
  std::vector<const Tensor*> trainable() const;

  ModelParams clone() const;
  void zero_grad();
};

long long param_count(const ModelConfig& cfg);

struct LayerCount {
  std::string name;
  std::string shape;
  long long count;
};
std::vector<LayerCount> param_breakdown(const ModelConfig& cfg);

// c ~ N(0,1); conv/linear weights ~ N(0, 1/fan_in); biases zero;
// batch-norm gamma 1, beta 0, running stats (0,1); fixed draw order
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

enum class ForwardPath {
  composed,  // module-by-module, one tensor per published equation
  fused      // same function; exploits the depth-rank-1 attention output
};

// x: [B,1,C,T] -> [B,D,C,T]
Tensor channel_attention_forward(const Tensor& x, const ModelParams& p);

// x: [B,D,C,T] -> [B,D,C,T]; per-(b,d,ch) time-axis MLP score, softmax over
// channels, weights broadcast over time
Tensor nonlinear_attention_forward(const Tensor& x, const ModelParams& p);

// f: [B,Do,Co,To] -> same shape; semi-global pooling over channels,
// cross-depth conv (edge-replicated padding), softmax over depth scaled
// by Do, Hadamard with the input
Tensor depth_attention_forward(const Tensor& f, const ModelParams& p);

// x: attention output [B,D,C,T] -> logits [B,n_classes]
Tensor benchmark_forward(const Tensor& x, ModelParams& p,
                         const ModelConfig& cfg, Mode mode);

// x: [B,1,C,T] -> logits [B,n_classes]
Tensor model_forward(const Tensor& x, ModelParams& p, const ModelConfig& cfg,
                     Mode mode, ForwardPath path = ForwardPath::fused);

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

// binary format: magic "NLMD", version u16, config block, then each array as
// (rank u8, extents u32..., f64 payload), all little-endian; round-trips are
// bit-exact. Array order: c, w1, b1, w2, temporal_w, temporal_b, depth_w,
// depth_b, spatial_w, spatial_b, bn1 gamma/beta/mean/var, bn2
// gamma/beta/mean/var (batch-norm arrays only when enabled), fc_w, fc_b.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nlmda
