#include "nlmda/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "nlmda/rng.hpp"

namespace nlmda {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 6.28318530717958647692;
}  // namespace

void RawRecording::validate() const {
  check(fs > 0.0, "recording: sampling rate must be positive");
  check(samples.defined() && samples.rank() == 2,
        "recording: samples must be [C, n]");
  if (!channel_names.empty()) {
    check(channel_names.size() == channel_count(),
          "recording: channel label count mismatch");
    std::set<std::string> uniq(channel_names.begin(), channel_names.end());
    check(uniq.size() == channel_names.size(),
          "recording: channel labels must be unique");
  }
  for (const auto& [t, v] : perclos) {
    (void)t;
    check(v >= 0.0 && v <= 1.0, "recording: PERCLOS value " +
                                    std::to_string(v) + " outside [0,1]");
  }
}

void EpochSet::validate() const {
  check(epochs.defined() && epochs.rank() == 4 && epochs.extent(1) == 1,
        "epoch set: epochs must be [n,1,C,T]");
  if (labels.size() != size())
    throw EpochFileError(EpochFileError::Code::label_count_mismatch,
                         "epoch set: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(size()) +
                             " epochs");
  for (int l : labels)
    check(l == 0 || l == 1, "epoch set: labels must be 0 or 1");
  check(fs_hz > 0, "epoch set: sampling rate must be positive");
}

EpochSet EpochSet::subset(const std::vector<std::size_t>& idx) const {
  const std::size_t C = channels(), T = samples();
  Tensor out = Tensor::zeros({idx.size(), 1, C, T});
  std::vector<int> out_labels(idx.size());
  const std::size_t row = C * T;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] < size(), "subset: index out of range");
    std::memcpy(out.data() + i * row, epochs.data() + idx[i] * row,
                row * sizeof(double));
    out_labels[i] = labels[idx[i]];
  }
  EpochSet s;
  s.epochs = out;
  s.labels = std::move(out_labels);
  s.fs_hz = fs_hz;
  s.provenance = provenance;
  return s;
}

namespace {

// unit-DC-gain windowed-sinc lowpass
std::vector<double> hamming_lowpass(double fs, double cutoff,
                                    std::size_t taps) {
  const std::ptrdiff_t m = static_cast<std::ptrdiff_t>(taps - 1) / 2;
  const double fc = cutoff / fs;
  std::vector<double> h(taps);
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) {
    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(i) - m;
    const double window =
        0.54 - 0.46 * std::cos(kTwoPi * static_cast<double>(i) /
                               static_cast<double>(taps - 1));
    const double ideal =
        (k == 0) ? 2.0 * fc
                 : std::sin(kTwoPi * fc * static_cast<double>(k)) /
                       (kPi * static_cast<double>(k));
    h[i] = ideal * window;
    sum += h[i];
  }
  for (double& v : h) v /= sum;
  return h;
}

}  // namespace

std::vector<double> fir_bandpass(double fs, double lo, double hi,
                                 std::size_t taps) {
  check(fs > 0.0, "fir_bandpass: sampling rate must be positive");
  check(lo > 0.0 && lo < hi && hi < fs / 2.0,
        "fir_bandpass: band must satisfy 0 < lo < hi < fs/2");
  check(taps >= 3 && taps % 2 == 1, "fir_bandpass: taps must be odd and >= 3");
  std::vector<double> high = hamming_lowpass(fs, hi, taps);
  std::vector<double> low = hamming_lowpass(fs, lo, taps);
  for (std::size_t i = 0; i < taps; ++i) high[i] -= low[i];
  return high;
}

double fir_gain(const std::vector<double>& h, double fs, double freq) {
  const double w = kTwoPi * freq / fs;
  std::complex<double> acc(0.0, 0.0);
  for (std::size_t n = 0; n < h.size(); ++n) {
    acc += h[n] * std::exp(std::complex<double>(0.0, -w * static_cast<double>(n)));
  }
  return std::abs(acc);
}

RawRecording filter_and_decimate(const RawRecording& rec, int factor) {
  return filter_and_decimate(rec, factor, fir_bandpass(rec.fs));
}

RawRecording filter_and_decimate(const RawRecording& rec, int factor,
                                 const std::vector<double>& fir) {
  rec.validate();
  check(factor >= 1, "filter_and_decimate: factor must be >= 1");
  check(static_cast<long long>(rec.fs) % factor == 0 &&
            rec.fs == std::floor(rec.fs),
        "filter_and_decimate: sampling rate " + std::to_string(rec.fs) +
            " not divisible by factor " + std::to_string(factor));
  const std::size_t C = rec.channel_count(), n = rec.length();
  const std::size_t taps = fir.size();
  const std::ptrdiff_t m = static_cast<std::ptrdiff_t>(taps - 1) / 2;

  const std::size_t n_out = (n + static_cast<std::size_t>(factor) - 1) /
                            static_cast<std::size_t>(factor);
  Tensor out = Tensor::zeros({C, n_out});
  for (std::size_t ch = 0; ch < C; ++ch) {
    const double* x = rec.samples.data() + ch * n;
    double* y = out.data() + ch * n_out;
    for (std::size_t o = 0; o < n_out; ++o) {
      const std::ptrdiff_t center =
          static_cast<std::ptrdiff_t>(o) * factor;
      double acc = 0.0;
      for (std::size_t k = 0; k < taps; ++k) {
        const std::ptrdiff_t idx =
            center - static_cast<std::ptrdiff_t>(k) + m;
        if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(n))
          acc += fir[k] * x[idx];
      }
      y[o] = acc;
    }
  }
  RawRecording result;
  result.fs = rec.fs / factor;
  result.channel_names = rec.channel_names;
  result.samples = out;
  result.perclos = rec.perclos;
  return result;
}

Epoched epoch(const RawRecording& rec, double epoch_len_s) {
  rec.validate();
  check(epoch_len_s > 0.0, "epoch: length must be positive");
  check(!rec.perclos.empty(), "epoch: recording has no PERCLOS series");
  for (std::size_t i = 1; i < rec.perclos.size(); ++i)
    check(rec.perclos[i - 1].first <= rec.perclos[i].first,
          "epoch: PERCLOS series must be time-sorted");
  const std::size_t T =
      static_cast<std::size_t>(std::llround(rec.fs * epoch_len_s));
  const std::size_t C = rec.channel_count(), n = rec.length();
  check(T >= 1 && T <= n, "epoch: recording shorter than one epoch (" +
                              std::to_string(n) + " < " + std::to_string(T) +
                              " samples)");
  const std::size_t n_ep = n / T;

  Tensor epochs = Tensor::zeros({n_ep, 1, C, T});
  for (std::size_t e = 0; e < n_ep; ++e)
    for (std::size_t ch = 0; ch < C; ++ch)
      std::memcpy(epochs.data() + (e * C + ch) * T,
                  rec.samples.data() + ch * n + e * T, T * sizeof(double));

  std::vector<double> per(n_ep);
  for (std::size_t e = 0; e < n_ep; ++e) {
    const double mid =
        (static_cast<double>(e * T) + static_cast<double>(T) / 2.0) / rec.fs;
    // nearest series sample; earlier wins ties
    std::size_t best = 0;
    double best_d = std::abs(rec.perclos[0].first - mid);
    for (std::size_t i = 1; i < rec.perclos.size(); ++i) {
      const double d = std::abs(rec.perclos[i].first - mid);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    per[e] = rec.perclos[best].second;
  }
  return Epoched{epochs, std::move(per)};
}

std::vector<int> perclos_to_labels(const std::vector<double>& values) {
  std::vector<int> labels(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    check(values[i] >= 0.0 && values[i] <= 1.0,
          "perclos_to_labels: value " + std::to_string(values[i]) +
              " outside [0,1]");
    labels[i] = values[i] >= 0.5 ? 1 : 0;
  }
  return labels;
}

namespace {

std::vector<std::vector<std::size_t>> per_class_shuffled(
    const std::vector<int>& labels, std::uint64_t seed,
    std::size_t min_per_class, const char* op) {
  std::vector<std::vector<std::size_t>> by_class(2);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check(labels[i] == 0 || labels[i] == 1,
          std::string(op) + ": labels must be 0 or 1");
    by_class[labels[i]].push_back(i);
  }
  check(!by_class[0].empty() && !by_class[1].empty(),
        std::string(op) + ": both classes must be present");
  for (int c = 0; c < 2; ++c)
    check(by_class[c].size() >= min_per_class,
          std::string(op) + ": class " + std::to_string(c) + " has only " +
              std::to_string(by_class[c].size()) + " samples, need >= " +
              std::to_string(min_per_class));
  Rng rng(seed);
  for (auto& v : by_class) rng.shuffle(v);
  return by_class;
}

}  // namespace

SplitSpec stratified_split(const std::vector<int>& labels, int train_pct,
                           int val_pct, int test_pct, std::uint64_t seed) {
  check(train_pct >= 0 && val_pct >= 0 && test_pct >= 0 &&
            train_pct + val_pct + test_pct == 100,
        "stratified_split: percentages must be non-negative and sum to 100");
  auto by_class = per_class_shuffled(labels, seed, 3, "stratified_split");

  SplitSpec spec;
  spec.seed = seed;
  for (const auto& cls : by_class) {
    const std::size_t n = cls.size();
    const std::size_t n_train = n * static_cast<std::size_t>(train_pct) / 100;
    const std::size_t n_val = n * static_cast<std::size_t>(val_pct) / 100;
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_train)
        spec.train.push_back(cls[i]);
      else if (i < n_train + n_val)
        spec.val.push_back(cls[i]);
      else
        spec.test.push_back(cls[i]);
    }
  }
  std::sort(spec.train.begin(), spec.train.end());
  std::sort(spec.val.begin(), spec.val.end());
  std::sort(spec.test.begin(), spec.test.end());
  return spec;
}

SplitSpec stratified_split(const EpochSet& set, std::uint64_t seed) {
  set.validate();
  return stratified_split(set.labels, 70, 15, 15, seed);
}

FoldPlan stratified_kfold(const std::vector<int>& labels, int k,
                          std::uint64_t seed) {
  check(k >= 2, "stratified_kfold: k must be >= 2");
  auto by_class = per_class_shuffled(labels, seed,
                                     static_cast<std::size_t>(k),
                                     "stratified_kfold");
  FoldPlan plan;
  plan.seed = seed;
  plan.folds.assign(k, {});
  for (const auto& cls : by_class)
    for (std::size_t i = 0; i < cls.size(); ++i)
      plan.folds[i % static_cast<std::size_t>(k)].push_back(cls[i]);
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_carve(
    const std::vector<int>& labels, int val_pct, std::uint64_t seed) {
  check(val_pct > 0 && val_pct < 100, "stratified_carve: pct outside (0,100)");
  auto by_class = per_class_shuffled(labels, seed, 2, "stratified_carve");
  std::vector<std::size_t> train, val;
  for (const auto& cls : by_class) {
    const std::size_t n_val = std::max<std::size_t>(
        1, cls.size() * static_cast<std::size_t>(val_pct) / 100);
    for (std::size_t i = 0; i < cls.size(); ++i)
      (i < n_val ? val : train).push_back(cls[i]);
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

EpochSet synth_generate(std::size_t n_per_class, std::size_t channels,
                        std::size_t samples, int fs_hz, std::uint64_t seed) {
  check(n_per_class >= 1, "synth_generate: n_per_class must be >= 1");
  check(channels >= 1 && samples >= 8, "synth_generate: degenerate geometry");
  check(fs_hz > 0, "synth_generate: sampling rate must be positive");
  const std::size_t n_total = 2 * n_per_class;
  const std::size_t n_posterior = std::min<std::size_t>(11, channels);
  const std::size_t first_posterior = channels - n_posterior;
  const std::size_t n_freq = samples / 2 - 1;  // 1/f background components
  const double alpha_cycles = 10.0 * static_cast<double>(samples) / fs_hz;
  const double theta_cycles = 5.0 * static_cast<double>(samples) / fs_hz;

  Rng rng(seed);
  Tensor epochs = Tensor::zeros({n_total, 1, channels, samples});
  std::vector<int> labels(n_total);

  auto add_tone = [samples](double* row, double cycles, double amp,
                            double phase) {
    const double w = kTwoPi * cycles / static_cast<double>(samples);
    std::complex<double> z = std::polar(1.0, phase);
    const std::complex<double> step = std::polar(1.0, w);
    for (std::size_t t = 0; t < samples; ++t) {
      row[t] += amp * z.real();
      z *= step;
    }
  };

  for (std::size_t e = 0; e < n_total; ++e) {
    const int label = e < n_per_class ? 0 : 1;
    labels[e] = label;
    const double alpha_phase = rng.uniform(0.0, kTwoPi);
    const double theta_phase = rng.uniform(0.0, kTwoPi);
    for (std::size_t ch = 0; ch < channels; ++ch) {
      double* row = epochs.data() + (e * channels + ch) * samples;
      for (std::size_t k = 1; k <= n_freq; ++k) {
        add_tone(row, static_cast<double>(k), 1.0 / static_cast<double>(k),
                 rng.uniform(0.0, kTwoPi));
      }
      if (ch >= first_posterior) {
        add_tone(row, alpha_cycles, label == 0 ? 1.0 : 3.0, alpha_phase);
        if (label == 1) add_tone(row, theta_cycles, 1.5, theta_phase);
      }
    }
  }

  EpochSet set;
  set.epochs = epochs;
  set.labels = std::move(labels);
  set.fs_hz = fs_hz;
  set.provenance = "synthetic(seed=" + std::to_string(seed) +
                   ", n_per_class=" + std::to_string(n_per_class) + ")";
  return set;
}

namespace {

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i)
    buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

constexpr std::uint16_t kEpochFileVersion = 1;

}  // namespace

void write_epochs(const EpochSet& set, const std::string& path) {
  set.validate();
  check(set.channels() <= 0xffff && set.samples() <= 0xffff &&
            set.fs_hz <= 0xffff,
        "write_epochs: header field exceeds u16 range");
  std::string buf;
  buf.reserve(32 + set.size() + set.epochs.numel() * 4);
  buf += "NEEG";
  put_u16(buf, kEpochFileVersion);
  put_u64(buf, set.size());
  put_u16(buf, static_cast<std::uint16_t>(set.channels()));
  put_u16(buf, static_cast<std::uint16_t>(set.samples()));
  put_u16(buf, static_cast<std::uint16_t>(set.fs_hz));
  buf.push_back(1);  // label dtype: u8
  for (int l : set.labels) buf.push_back(static_cast<char>(l));
  const double* p = set.epochs.data();
  for (std::size_t i = 0; i < set.epochs.numel(); ++i)
    put_f32(buf, static_cast<float>(p[i]));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw EpochFileError(EpochFileError::Code::bad_header,
                         "write_epochs: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out)
    throw EpochFileError(EpochFileError::Code::truncated_payload,
                         "write_epochs: short write to " + path);

  std::ofstream man(path + ".manifest", std::ios::trunc);
  if (man) {
    man << "format=NEEG v" << kEpochFileVersion << "\n"
        << "source=" << set.provenance << "\n"
        << "n_epochs=" << set.size() << "\n"
        << "channels=" << set.channels() << "\n"
        << "samples=" << set.samples() << "\n"
        << "fs_hz=" << set.fs_hz << "\n";
  }
}

EpochSet read_epochs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw EpochFileError(EpochFileError::Code::bad_header,
                         "read_epochs: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());

  if (buf.size() < 4 || buf.compare(0, 4, "NEEG") != 0)
    throw EpochFileError(EpochFileError::Code::bad_magic,
                         "read_epochs: bad magic in " + path);
  std::size_t pos = 4;
  auto get_u16 = [&](const char* what) -> std::uint16_t {
    if (pos + 2 > buf.size())
      throw EpochFileError(EpochFileError::Code::bad_header,
                           std::string("read_epochs: truncated ") + what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
      v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos++]))
           << (8 * i);
    return v;
  };
  auto get_u64 = [&](const char* what) -> std::uint64_t {
    if (pos + 8 > buf.size())
      throw EpochFileError(EpochFileError::Code::bad_header,
                           std::string("read_epochs: truncated ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++]))
           << (8 * i);
    return v;
  };

  const std::uint16_t version = get_u16("version");
  if (version != kEpochFileVersion)
    throw EpochFileError(EpochFileError::Code::version_mismatch,
                         "read_epochs: unsupported version " +
                             std::to_string(version));
  const std::uint64_t n_epochs = get_u64("n_epochs");
  const std::uint16_t C = get_u16("channels");
  const std::uint16_t T = get_u16("samples");
  const std::uint16_t fs = get_u16("fs_hz");
  if (pos + 1 > buf.size())
    throw EpochFileError(EpochFileError::Code::bad_header,
                         "read_epochs: truncated header");
  const std::uint8_t dtype = static_cast<std::uint8_t>(buf[pos++]);
  if (dtype != 1)
    throw EpochFileError(EpochFileError::Code::bad_header,
                         "read_epochs: unknown label dtype " +
                             std::to_string(dtype));
  if (C == 0 || T == 0 || fs == 0 || n_epochs == 0)
    throw EpochFileError(EpochFileError::Code::bad_header,
                         "read_epochs: degenerate header in " + path);

  if (pos + n_epochs > buf.size())
    throw EpochFileError(
        EpochFileError::Code::label_count_mismatch,
        "read_epochs: file ends inside label block (header claims " +
            std::to_string(n_epochs) + " epochs)");
  std::vector<int> labels(n_epochs);
  for (std::size_t i = 0; i < n_epochs; ++i) {
    const std::uint8_t l = static_cast<std::uint8_t>(buf[pos++]);
    if (l > 1)
      throw EpochFileError(EpochFileError::Code::bad_header,
                           "read_epochs: label byte " + std::to_string(l) +
                               " is not 0/1");
    labels[i] = l;
  }

  const std::size_t n_vals =
      static_cast<std::size_t>(n_epochs) * C * T;
  if (pos + n_vals * 4 > buf.size())
    throw EpochFileError(EpochFileError::Code::truncated_payload,
                         "read_epochs: header n_epochs larger than payload");
  if (pos + n_vals * 4 < buf.size())
    throw EpochFileError(EpochFileError::Code::bad_header,
                         "read_epochs: trailing bytes after payload");

  Tensor epochs = Tensor::zeros({n_epochs, 1, C, T});
  double* out = epochs.data();
  for (std::size_t i = 0; i < n_vals; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++]))
              << (8 * b);
    float f;
    std::memcpy(&f, &bits, 4);
    out[i] = static_cast<double>(f);
  }

  EpochSet set;
  set.epochs = epochs;
  set.labels = std::move(labels);
  set.fs_hz = fs;
  set.provenance = "file:" + path;
  return set;
}

RawRecording read_raw_f32(const std::string& path, std::size_t channels,
                          double fs) {
  check(channels >= 1, "read_raw_f32: channels must be >= 1");
  check(fs > 0.0, "read_raw_f32: sampling rate must be positive");
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), "read_raw_f32: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  check(buf.size() % (4 * channels) == 0,
        "read_raw_f32: file size " + std::to_string(buf.size()) +
            " is not a multiple of 4*channels");
  const std::size_t n = buf.size() / (4 * channels);
  check(n >= 1, "read_raw_f32: empty recording");

  RawRecording rec;
  rec.fs = fs;
  rec.samples = Tensor::zeros({channels, n});
  double* out = rec.samples.data();
  std::size_t pos = 0;
  for (std::size_t i = 0; i < channels * n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++]))
              << (8 * b);
    float f;
    std::memcpy(&f, &bits, 4);
    out[i] = static_cast<double>(f);
  }
  return rec;
}

std::vector<std::pair<double, double>> read_perclos_series(
    const std::string& path) {
  std::ifstream in(path);
  check(static_cast<bool>(in), "read_perclos_series: cannot open " + path);
  std::vector<std::pair<double, double>> series;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, v;
    check(static_cast<bool>(ss >> t >> v),
          "read_perclos_series: malformed line " + std::to_string(line_no));
    series.emplace_back(t, v);
  }
  check(!series.empty(), "read_perclos_series: no samples in " + path);
  return series;
}

}  // namespace nlmda
