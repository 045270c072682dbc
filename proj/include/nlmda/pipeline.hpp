#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nlmda/tensor.hpp"

namespace nlmda {

struct RawRecording {
  double fs = 0.0;
  std::vector<std::string> channel_names;  // unique; may be empty
  Tensor samples;                          // [C, n]
  std::vector<std::pair<double, double>> perclos;  // (time s, value in [0,1])

  std::size_t channel_count() const { return samples.extent(0); }
  std::size_t length() const { return samples.extent(1); }
  void validate() const;
};

struct EpochSet {
  Tensor epochs;            // [n, 1, C, T]
  std::vector<int> labels;  // 0 awake, 1 drowsy
  int fs_hz = 200;
  std::string provenance;

  std::size_t size() const { return epochs.extent(0); }
  std::size_t channels() const { return epochs.extent(2); }
  std::size_t samples() const { return epochs.extent(3); }
  EpochSet subset(const std::vector<std::size_t>& idx) const;
  void validate() const;
};

struct SplitSpec {
  std::uint64_t seed = 0;
  std::vector<std::size_t> train, val, test;
};

struct FoldPlan {
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> folds;
};

// linear-phase windowed-sinc band-pass, built as lowpass(hi) - lowpass(lo),
// Hamming window, each lowpass normalized to unit DC gain so the difference
// has zero DC gain by construction
std::vector<double> fir_bandpass(double fs, double lo = 1.0, double hi = 75.0,
                                 std::size_t taps = 1001);

// |H(freq)| of an FIR at sampling rate fs
double fir_gain(const std::vector<double>& h, double fs, double freq);

// same-length centered convolution with zero-padded edges, then keep every
// factor-th sample; fs must be divisible by factor
RawRecording filter_and_decimate(const RawRecording& rec, int factor);
RawRecording filter_and_decimate(const RawRecording& rec, int factor,
                                 const std::vector<double>& fir);

struct Epoched {
  Tensor epochs;                // [n, 1, C, T]
  std::vector<double> perclos;  // per-epoch, series value nearest the midpoint
};
Epoched epoch(const RawRecording& rec, double epoch_len_s = 1.0);

// drowsy (1) iff value >= 0.5; values outside [0,1] rejected
std::vector<int> perclos_to_labels(const std::vector<double>& values);

// per-class shuffle, floor(pct*n_class/100) to train and val, rest to test
SplitSpec stratified_split(const std::vector<int>& labels, int train_pct,
                           int val_pct, int test_pct, std::uint64_t seed);
SplitSpec stratified_split(const EpochSet& set, std::uint64_t seed);

// per-class shuffle, deal round-robin; fold class counts within +-1
FoldPlan stratified_kfold(const std::vector<int>& labels, int k,
                          std::uint64_t seed);

// holds out max(1, floor(val_pct*n_class/100)) per class; rest is train
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_carve(
    const std::vector<int>& labels, int val_pct, std::uint64_t seed);

// 1/f-shaped background plus a 10 Hz component on the posterior channels;
// the drowsy class triples the 10 Hz amplitude and adds a 5 Hz component
EpochSet synth_generate(std::size_t n_per_class, std::size_t channels = 17,
                        std::size_t samples = 200, int fs_hz = 200,
                        std::uint64_t seed = 0);

struct EpochFileError : std::runtime_error {
  enum class Code {
    bad_magic,
    version_mismatch,
    bad_header,
    label_count_mismatch,
    truncated_payload,
  };
  Code code;
  EpochFileError(Code c, const std::string& msg)
      : std::runtime_error(msg), code(c) {}
};

// binary format: magic "NEEG", version u16=1, header {n_epochs u64, C u16,
// T u16, fs_hz u16, label_dtype u8=1}, labels u8[n], payload f32 LE in
// (epoch, channel, time) order. Also writes <path>.manifest (key=value).
void write_epochs(const EpochSet& set, const std::string& path);
EpochSet read_epochs(const std::string& path);

// channel-major float32 import: [C x n], n inferred from the file size
RawRecording read_raw_f32(const std::string& path, std::size_t channels,
                          double fs);
// text lines "time_s value"
std::vector<std::pair<double, double>> read_perclos_series(
    const std::string& path);

}  // namespace nlmda
