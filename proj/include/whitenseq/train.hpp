#pragma once

#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

#include "whitenseq/data.hpp"
#include "whitenseq/model.hpp"

namespace whitenseq {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double dropout_rate = 0.2;
  std::size_t batch_size = 256;
  std::size_t max_seq_len = 50;
  std::size_t d_model = 64;
  std::size_t blocks = 2;
  std::size_t heads = 2;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  TargetStyle target_style = TargetStyle::kAllPositions;
};

void validate(const TrainConfig& config);

struct TrainHistory {
  std::vector<double> loss;        // mean training loss per epoch
  std::vector<double> val_ndcg20;  // validation NDCG@20 per epoch
  std::vector<double> kappa;       // condition number of the item matrix
  std::size_t stopped_epoch = 0;   // number of epochs actually run
  std::size_t best_epoch = 0;      // 1-based epoch whose parameters are returned
};

std::string history_csv(const TrainHistory& history);

// Stops once the metric has gone `patience` consecutive epochs without a
// strict improvement over the best seen; ties keep the earlier epoch.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);
  bool update(std::size_t epoch, double metric);  // true = stop now
  double best_metric() const { return best_metric_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  double best_metric_;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
};

// Adam with decoupled weight decay over the flat list of trainable
// tensors (bias-corrected, beta1 0.9, beta2 0.999, eps 1e-8).
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t total_params, double learning_rate, double weight_decay);
  void step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads);

 private:
  double lr_, wd_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

// Full training loop: batched next-item cross entropy, Adam updates,
// per-epoch validation NDCG@20 with early stopping, parameters restored
// from the best validation epoch. frozen_text is required (and copied
// into the model) for every text-bearing variant.
TrainResult train(const InteractionDataset& dataset, const EncoderVariant& variant,
                  const TrainConfig& config, const Matrix* frozen_text);

// Compares analytic gradients against central finite differences
// (step 1e-5) on a small random problem; returns the max relative error
// over every trainable scalar. Dims are capped (d_model and item count
// at most 16) to keep the sweep exact and fast.
double grad_check(const EncoderVariant& variant, const TrainConfig& config,
                  std::size_t item_count, std::uint64_t seed);

}  // namespace whitenseq
