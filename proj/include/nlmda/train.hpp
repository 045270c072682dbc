#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nlmda/model.hpp"
#include "nlmda/pipeline.hpp"

namespace nlmda {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate(bool batchnorm_on) const;
};

struct AdamState {
  std::vector<Tensor> m, v;
  long long t = 0;

  static AdamState init(const std::vector<Tensor*>& params);
};

// standard Adam with bias correction; a missing grad buffer counts as zero
void adam_step(const std::vector<Tensor*>& params, AdamState& state,
               const TrainConfig& cfg);

struct EpochStats {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct FitResult {
  ModelParams params;  // snapshot from the best-validation epoch
  int best_epoch = 0;  // 1-based; ties resolve to the earlier epoch
  std::vector<EpochStats> history;
};

// clones `init`, trains with seeded shuffling and mini-batches, records
// train loss and validation accuracy per epoch, returns the best snapshot
FitResult fit(const ModelConfig& mcfg, const ModelParams& init,
              const EpochSet& train, const EpochSet& val,
              const TrainConfig& tcfg);

// argmax accuracy; logit ties break toward the lower class index
double evaluate(const ModelConfig& cfg, ModelParams& params,
                const EpochSet& set);

struct RunMetrics {
  std::vector<double> fold_accuracies;
  double mean = 0.0;
  double ci95_halfwidth = 0.0;  // 1.96 * population std / sqrt(k)
  std::vector<std::vector<EpochStats>> fold_history;
  std::vector<double> baseline_fold_accuracies;  // empty unless requested
  double baseline_mean = 0.0;
};

// recomputes mean and ci95_halfwidth from fold_accuracies
void summarize(RunMetrics& metrics);

// per fold: train on the other k-1 folds with a stratified 10% validation
// carve-out, evaluate on the held-out fold
RunMetrics cross_validate(const EpochSet& set, ModelConfig mcfg,
                          const TrainConfig& tcfg, int k = 5,
                          bool with_baseline = false, int jobs = 1);

// multinomial logistic regression on flattened epochs, trained with the
// same Adam loop; returns test accuracy
double baseline_logistic(const EpochSet& train, const EpochSet& test,
                         const TrainConfig& cfg);

// key=value metrics file; `extra` rows land in the [results] section
void write_metrics(const std::string& path, const std::string& command,
                   const ModelConfig& mcfg, const TrainConfig& tcfg,
                   const RunMetrics& metrics,
                   const std::vector<std::pair<std::string, std::string>>&
                       extra = {});

}  // namespace nlmda
