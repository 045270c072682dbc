#include "nlmda/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "nlmda/rng.hpp"

namespace nlmda {

int compute_k_pooling(int sample_rate_hz, long long n_train) {
  check(sample_rate_hz > 0, "compute_k_pooling: sample rate must be positive");
  check(n_train >= 1, "compute_k_pooling: training-sample count must be >= 1");
  const long long n = std::max(1LL, n_train / 200);
  const long long k = std::max(1LL, static_cast<long long>(sample_rate_hz) /
                                        (10 * n));
  return static_cast<int>(k);
}

void ModelConfig::validate() const {
  check(channels >= 1, "config: channels must be >= 1");
  check(samples >= 1, "config: samples must be >= 1");
  check(depth >= 1, "config: depth must be >= 1");
  check(temporal_kernels >= 1, "config: temporal_kernels must be >= 1");
  check(temporal_len >= 1 && temporal_len <= samples,
        "config: temporal_len must lie in [1, samples]");
  check(spatial_kernels >= 1, "config: spatial_kernels must be >= 1");
  check(depth_attn_kernel >= 1, "config: depth_attn_kernel must be >= 1");
  check(attn_hidden >= 1, "config: attn_hidden must be >= 1");
  check(n_classes >= 2, "config: n_classes must be >= 2");
  check(sample_rate >= 1, "config: sample_rate must be >= 1");
  check(n_train >= 1, "config: n_train must be >= 1");
  check(pooled_time() >= 1,
        "config: pooling kernel " + std::to_string(k_pooling()) +
            " leaves no time samples after the temporal conv");
}

std::vector<Tensor*> ModelParams::trainable() {
  std::vector<Tensor*> out = {&c,          &w1,        &b1,
                              &w2,         &temporal_w, &temporal_b,
                              &depth_w,    &depth_b,    &spatial_w,
                              &spatial_b};
  if (bn1_gamma.defined()) {
    out.push_back(&bn1_gamma);
    out.push_back(&bn1_beta);
    out.push_back(&bn2_gamma);
    out.push_back(&bn2_beta);
  }
  out.push_back(&fc_w);
  out.push_back(&fc_b);
  return out;
}

std::vector<const Tensor*> ModelParams::trainable() const {
  auto mut = const_cast<ModelParams*>(this)->trainable();
  return {mut.begin(), mut.end()};
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  auto copy = [](const Tensor& t) { return t.defined() ? t.clone() : Tensor(); };
  out.c = copy(c);
  out.w1 = copy(w1);
  out.b1 = copy(b1);
  out.w2 = copy(w2);
  out.temporal_w = copy(temporal_w);
  out.temporal_b = copy(temporal_b);
  out.depth_w = copy(depth_w);
  out.depth_b = copy(depth_b);
  out.spatial_w = copy(spatial_w);
  out.spatial_b = copy(spatial_b);
  out.bn1_gamma = copy(bn1_gamma);
  out.bn1_beta = copy(bn1_beta);
  out.bn1_mean = copy(bn1_mean);
  out.bn1_var = copy(bn1_var);
  out.bn2_gamma = copy(bn2_gamma);
  out.bn2_beta = copy(bn2_beta);
  out.bn2_mean = copy(bn2_mean);
  out.bn2_var = copy(bn2_var);
  out.fc_w = copy(fc_w);
  out.fc_b = copy(fc_b);
  return out;
}

void ModelParams::zero_grad() {
  for (Tensor* t : trainable()) t->zero_grad();
}

std::vector<LayerCount> param_breakdown(const ModelConfig& cfg) {
  cfg.validate();
  const long long C = cfg.channels, T = cfg.samples, D = cfg.depth;
  const long long K = cfg.temporal_kernels, J = cfg.temporal_len;
  const long long S = cfg.spatial_kernels, Kd = cfg.depth_attn_kernel;
  const long long H = cfg.attn_hidden, F = cfg.flat_features();
  const long long NC = cfg.n_classes;

  auto sh3 = [](long long a, long long b, long long c) {
    return "(" + std::to_string(a) + "," + std::to_string(b) + "," +
           std::to_string(c) + ")";
  };
  auto sh2 = [](long long a, long long b) {
    return "(" + std::to_string(a) + "," + std::to_string(b) + ")";
  };
  auto sh1 = [](long long a) { return "(" + std::to_string(a) + ")"; };
  auto sh4 = [](long long a, long long b, long long c, long long d) {
    return "(" + std::to_string(a) + "," + std::to_string(b) + "," +
           std::to_string(c) + "," + std::to_string(d) + ")";
  };

  std::vector<LayerCount> rows;
  rows.push_back({"channel_attention.c", sh3(D, 1, C), D * C});
  rows.push_back({"nonlinear_attention.w1", sh2(H, T), H * T});
  rows.push_back({"nonlinear_attention.b1", sh1(H), H});
  rows.push_back({"nonlinear_attention.w2", sh2(1, H), H});
  rows.push_back({"temporal_conv.weight", sh4(K, D, 1, J), K * D * J});
  rows.push_back({"temporal_conv.bias", sh1(K), K});
  rows.push_back({"depth_attention.conv_weight", sh4(1, 1, Kd, 1), Kd});
  rows.push_back({"depth_attention.conv_bias", sh1(1), 1});
  rows.push_back({"spatial_conv.weight", sh4(S, K, C, 1), S * K * C});
  rows.push_back({"spatial_conv.bias", sh1(S), S});
  if (cfg.use_batchnorm) {
    rows.push_back({"bn1.gamma", sh1(K), K});
    rows.push_back({"bn1.beta", sh1(K), K});
    rows.push_back({"bn2.gamma", sh1(S), S});
    rows.push_back({"bn2.beta", sh1(S), S});
  }
  rows.push_back({"fc.weight", sh2(NC, F), NC * F});
  rows.push_back({"fc.bias", sh1(NC), NC});
  return rows;
}

long long param_count(const ModelConfig& cfg) {
  long long total = 0;
  for (const LayerCount& row : param_breakdown(cfg)) total += row.count;
  return total;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t C = cfg.channels, T = cfg.samples, D = cfg.depth;
  const std::size_t K = cfg.temporal_kernels, J = cfg.temporal_len;
  const std::size_t S = cfg.spatial_kernels, Kd = cfg.depth_attn_kernel;
  const std::size_t H = cfg.attn_hidden, F = cfg.flat_features();
  const std::size_t NC = cfg.n_classes;

  auto normal_tensor = [&rng](Shape shape, double stddev) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (std::size_t i = 0; i < t.numel(); ++i)
      t.data()[i] = rng.normal(0.0, stddev);
    return t;
  };
  auto fan_in = [](std::size_t n) { return std::sqrt(1.0 / static_cast<double>(n)); };

  ModelParams p;
  p.c = normal_tensor({D, 1, C}, 1.0);
  p.w1 = normal_tensor({H, T}, fan_in(T));
  p.b1 = Tensor::zeros({H}, true);
  p.w2 = normal_tensor({1, H}, fan_in(H));
  p.temporal_w = normal_tensor({K, D, 1, J}, fan_in(D * J));
  p.temporal_b = Tensor::zeros({K}, true);
  p.depth_w = normal_tensor({1, 1, Kd, 1}, fan_in(Kd));
  p.depth_b = Tensor::zeros({1}, true);
  p.spatial_w = normal_tensor({S, K, C, 1}, fan_in(K * C));
  p.spatial_b = Tensor::zeros({S}, true);
  if (cfg.use_batchnorm) {
    p.bn1_gamma = Tensor::full({K}, 1.0).set_requires_grad(true);
    p.bn1_beta = Tensor::zeros({K}, true);
    p.bn1_mean = Tensor::zeros({K});
    p.bn1_var = Tensor::full({K}, 1.0);
    p.bn2_gamma = Tensor::full({S}, 1.0).set_requires_grad(true);
    p.bn2_beta = Tensor::zeros({S}, true);
    p.bn2_mean = Tensor::zeros({S});
    p.bn2_var = Tensor::full({S}, 1.0);
  }
  p.fc_w = normal_tensor({NC, F}, fan_in(F));
  p.fc_b = Tensor::zeros({NC}, true);
  return p;
}

Tensor channel_attention_forward(const Tensor& x, const ModelParams& p) {
  return contract_expand(x, p.c);
}

Tensor nonlinear_attention_forward(const Tensor& x, const ModelParams& p) {
  check(x.rank() == 4, "nonlinear_attention: expected [B,D,C,T], got " +
                           shape_str(x.shape()));
  const std::size_t B = x.extent(0), D = x.extent(1), C = x.extent(2),
                    T = x.extent(3);
  Tensor rows = reshape(x, {B * D * C, T});
  Tensor hidden = tanh_op(linear(rows, p.w1, &p.b1));
  Tensor scores = linear(hidden, p.w2, nullptr);      // [B*D*C, 1]
  Tensor e = reshape(scores, {B, D, C, 1});
  Tensor alpha = softmax_axis(e, 2);                  // over channels
  return mul_broadcast(alpha, x);
}

Tensor depth_attention_forward(const Tensor& f, const ModelParams& p) {
  check(f.rank() == 4, "depth_attention: expected [B,Do,Co,To], got " +
                           shape_str(f.shape()));
  const std::size_t depth = f.extent(1), chans = f.extent(2);
  check(depth >= 1, "depth_attention: depth extent must be >= 1");
  const std::size_t taps = p.depth_w.extent(2);
  const std::size_t lo = (taps - 1) / 2, hi = taps - 1 - lo;

  Tensor pooled = avg_pool(f, chans, 1);              // [B,Do,1,To]
  Tensor swapped = permute(pooled, {0, 2, 1, 3});     // [B,1,Do,To]
  Tensor padded = pad_edge(swapped, 2, lo, hi);
  Tensor conv = conv2d(padded, p.depth_w, p.depth_b, Padding::valid);
  Tensor scores = permute(conv, {0, 2, 1, 3});        // [B,Do,1,To]
  Tensor weights = scale(softmax_axis(scores, 1),
                         static_cast<double>(depth));  // uniform -> 1
  return mul_broadcast(weights, f);
}

namespace {

// temporal-conv output -> logits; shared by both forward paths
Tensor backbone_tail(const Tensor& f, ModelParams& p, const ModelConfig& cfg,
                     Mode mode) {
  const std::size_t B = f.extent(0);
  Tensor t = f;
  if (cfg.use_batchnorm)
    t = batch_norm(t, p.bn1_gamma, p.bn1_beta, p.bn1_mean, p.bn1_var, mode);
  t = gelu_op(t);
  t = depth_attention_forward(t, p);
  t = conv2d(t, p.spatial_w, p.spatial_b, Padding::valid);  // [B,S,1,T']
  if (cfg.use_batchnorm)
    t = batch_norm(t, p.bn2_gamma, p.bn2_beta, p.bn2_mean, p.bn2_var, mode);
  t = gelu_op(t);
  t = avg_pool(t, 1, static_cast<std::size_t>(cfg.k_pooling()));
  t = reshape(t, {B, static_cast<std::size_t>(cfg.flat_features())});
  return linear(t, p.fc_w, &p.fc_b);
}

void check_model_input(const Tensor& x, const ModelConfig& cfg) {
  check(x.rank() == 4 && x.extent(1) == 1,
        "model_forward: input must be [B,1,C,T], got " + shape_str(x.shape()));
  check(x.extent(2) == static_cast<std::size_t>(cfg.channels) &&
            x.extent(3) == static_cast<std::size_t>(cfg.samples),
        "model_forward: input " + shape_str(x.shape()) +
            " does not match config (C=" + std::to_string(cfg.channels) +
            ", T=" + std::to_string(cfg.samples) + ")");
}

}  // namespace

Tensor benchmark_forward(const Tensor& x, ModelParams& p,
                         const ModelConfig& cfg, Mode mode) {
  check(x.rank() == 4, "benchmark_forward: expected [B,D,C,T], got " +
                           shape_str(x.shape()));
  check(x.extent(1) == static_cast<std::size_t>(cfg.depth) &&
            x.extent(2) == static_cast<std::size_t>(cfg.channels) &&
            x.extent(3) == static_cast<std::size_t>(cfg.samples),
        "benchmark_forward: input " + shape_str(x.shape()) +
            " does not match config");
  check(p.fc_w.extent(1) == static_cast<std::size_t>(cfg.flat_features()),
        "benchmark_forward: fc weight " + shape_str(p.fc_w.shape()) +
            " does not match flat feature count " +
            std::to_string(cfg.flat_features()) +
            " (config/params mismatch, check n_train)");
  Tensor f = conv2d(x, p.temporal_w, p.temporal_b, Padding::valid);
  return backbone_tail(f, p, cfg, mode);
}

Tensor model_forward(const Tensor& x, ModelParams& p, const ModelConfig& cfg,
                     Mode mode, ForwardPath path) {
  check_model_input(x, cfg);
  if (path == ForwardPath::composed) {
    Tensor expanded = channel_attention_forward(x, p);
    Tensor attended = nonlinear_attention_forward(expanded, p);
    return benchmark_forward(attended, p, cfg, mode);
  }

  // Fused path: the attention output is s[b,d,ch] * x[b,ch,t] with
  // s = alpha * c, so the score MLP and the temporal conv both factor
  // through per-(b,ch) quantities. Same math as the composed path.
  const std::size_t B = x.extent(0), C = x.extent(2), T = x.extent(3);
  const std::size_t D = cfg.depth, H = cfg.attn_hidden;
  check(p.fc_w.extent(1) == static_cast<std::size_t>(cfg.flat_features()),
        "model_forward: fc weight " + shape_str(p.fc_w.shape()) +
            " does not match flat feature count " +
            std::to_string(cfg.flat_features()) +
            " (config/params mismatch, check n_train)");

  Tensor c4 = reshape(p.c, {1, D, C, 1});
  Tensor rows = reshape(x, {B * C, T});
  Tensor u = linear(rows, p.w1, nullptr);             // [B*C, H]
  Tensor u4 = reshape(u, {B, 1, C, H});
  Tensor z = add_broadcast(mul_broadcast(c4, u4),
                           reshape(p.b1, {1, 1, 1, H}));
  Tensor hidden = tanh_op(z);                         // [B,D,C,H]
  Tensor scores = linear(reshape(hidden, {B * D * C, H}), p.w2, nullptr);
  Tensor e = reshape(scores, {B, D, C, 1});
  Tensor alpha = softmax_axis(e, 2);
  Tensor s = mul_broadcast(alpha, c4);                // [B,D,C,1]
  Tensor f = rank1_time_conv(s, x, p.temporal_w, p.temporal_b);
  return backbone_tail(f, p, cfg, mode);
}

namespace {

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw CheckpointError(std::string("checkpoint truncated in ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
      v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos++]))
           << (8 * i);
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++]))
           << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++]))
           << (8 * i);
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

void put_array(std::string& buf, const Tensor& t) {
  buf.push_back(static_cast<char>(t.rank()));
  for (std::size_t e : t.shape()) put_u32(buf, static_cast<std::uint32_t>(e));
  for (std::size_t i = 0; i < t.numel(); ++i) put_f64(buf, t.data()[i]);
}

Tensor read_array(Reader& r, const char* what, bool requires_grad) {
  const std::uint8_t rank = r.u8(what);
  if (rank == 0 || rank > 4)
    throw CheckpointError(std::string("checkpoint: bad array rank for ") + what);
  Shape shape(rank);
  for (std::uint8_t i = 0; i < rank; ++i) shape[i] = r.u32(what);
  Tensor t = Tensor::zeros(shape, requires_grad);
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = r.f64(what);
  return t;
}

constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params) {
  cfg.validate();
  std::string buf;
  buf += "NLMD";
  put_u16(buf, kCheckpointVersion);
  put_u32(buf, cfg.channels);
  put_u32(buf, cfg.samples);
  put_u32(buf, cfg.depth);
  put_u32(buf, cfg.temporal_kernels);
  put_u32(buf, cfg.temporal_len);
  put_u32(buf, cfg.spatial_kernels);
  put_u32(buf, cfg.depth_attn_kernel);
  put_u32(buf, cfg.attn_hidden);
  put_u32(buf, cfg.n_classes);
  put_u32(buf, cfg.sample_rate);
  put_u64(buf, static_cast<std::uint64_t>(cfg.n_train));
  buf.push_back(cfg.use_batchnorm ? 1 : 0);
  put_u64(buf, cfg.seed);

  put_array(buf, params.c);
  put_array(buf, params.w1);
  put_array(buf, params.b1);
  put_array(buf, params.w2);
  put_array(buf, params.temporal_w);
  put_array(buf, params.temporal_b);
  put_array(buf, params.depth_w);
  put_array(buf, params.depth_b);
  put_array(buf, params.spatial_w);
  put_array(buf, params.spatial_b);
  if (cfg.use_batchnorm) {
    put_array(buf, params.bn1_gamma);
    put_array(buf, params.bn1_beta);
    put_array(buf, params.bn1_mean);
    put_array(buf, params.bn1_var);
    put_array(buf, params.bn2_gamma);
    put_array(buf, params.bn2_beta);
    put_array(buf, params.bn2_mean);
    put_array(buf, params.bn2_var);
  }
  put_array(buf, params.fc_w);
  put_array(buf, params.fc_b);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path +
                                  " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  Reader r(buf);
  r.need(4, "magic");
  if (buf.compare(0, 4, "NLMD") != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  r.pos = 4;
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported format version " +
                          std::to_string(version));

  ModelConfig cfg;
  cfg.channels = static_cast<int>(r.u32("config"));
  cfg.samples = static_cast<int>(r.u32("config"));
  cfg.depth = static_cast<int>(r.u32("config"));
  cfg.temporal_kernels = static_cast<int>(r.u32("config"));
  cfg.temporal_len = static_cast<int>(r.u32("config"));
  cfg.spatial_kernels = static_cast<int>(r.u32("config"));
  cfg.depth_attn_kernel = static_cast<int>(r.u32("config"));
  cfg.attn_hidden = static_cast<int>(r.u32("config"));
  cfg.n_classes = static_cast<int>(r.u32("config"));
  cfg.sample_rate = static_cast<int>(r.u32("config"));
  cfg.n_train = static_cast<long long>(r.u64("config"));
  cfg.use_batchnorm = r.u8("config") != 0;
  cfg.seed = r.u64("config");
  cfg.validate();

  ModelParams p;
  p.c = read_array(r, "c", true);
  p.w1 = read_array(r, "w1", true);
  p.b1 = read_array(r, "b1", true);
  p.w2 = read_array(r, "w2", true);
  p.temporal_w = read_array(r, "temporal_w", true);
  p.temporal_b = read_array(r, "temporal_b", true);
  p.depth_w = read_array(r, "depth_w", true);
  p.depth_b = read_array(r, "depth_b", true);
  p.spatial_w = read_array(r, "spatial_w", true);
  p.spatial_b = read_array(r, "spatial_b", true);
  if (cfg.use_batchnorm) {
    p.bn1_gamma = read_array(r, "bn1_gamma", true);
    p.bn1_beta = read_array(r, "bn1_beta", true);
    p.bn1_mean = read_array(r, "bn1_mean", false);
    p.bn1_var = read_array(r, "bn1_var", false);
    p.bn2_gamma = read_array(r, "bn2_gamma", true);
    p.bn2_beta = read_array(r, "bn2_beta", true);
    p.bn2_mean = read_array(r, "bn2_mean", false);
    p.bn2_var = read_array(r, "bn2_var", false);
  }
  p.fc_w = read_array(r, "fc_w", true);
  p.fc_b = read_array(r, "fc_b", true);
  if (r.pos != buf.size())
    throw CheckpointError("checkpoint: trailing bytes in " + path);
  return Checkpoint{cfg, p};
}

}  // namespace nlmda
