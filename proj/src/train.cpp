#include "whitenseq/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <utility>

#include "whitenseq/errors.hpp"
#include "whitenseq/eval.hpp"

namespace whitenseq {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void validate(const TrainConfig& config) {
  if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (!(config.weight_decay >= 0.0) || !std::isfinite(config.weight_decay)) {
    throw ConfigError("weight_decay must be finite and non-negative");
  }
  if (!(config.dropout_rate >= 0.0) || config.dropout_rate >= 1.0) {
    throw ConfigError("dropout_rate must be in [0, 1)");
  }
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (config.max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
  if (config.d_model == 0 || config.heads == 0 || config.d_model % config.heads != 0) {
    throw ConfigError("d_model must be a positive multiple of heads");
  }
  if (config.max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (config.patience == 0) throw ConfigError("patience must be at least 1");
}

std::string history_csv(const TrainHistory& history) {
  std::string out = "epoch,loss,val_ndcg20,kappa\n";
  for (std::size_t e = 0; e < history.loss.size(); ++e) {
    out += std::to_string(e + 1) + "," + fmt_double(history.loss[e]) + "," +
           fmt_double(history.val_ndcg20[e]) + "," + fmt_double(history.kappa[e]) + "\n";
  }
  return out;
}

EarlyStopper::EarlyStopper(std::size_t patience)
    : patience_(patience), best_metric_(-std::numeric_limits<double>::infinity()) {
  if (patience == 0) throw ConfigError("patience must be at least 1");
}

bool EarlyStopper::update(std::size_t epoch, double metric) {
  if (metric > best_metric_) {
    best_metric_ = metric;
    best_epoch_ = epoch;
    stale_ = 0;
    return false;
  }
  ++stale_;
  return stale_ >= patience_;
}

AdamOptimizer::AdamOptimizer(std::size_t total_params, double learning_rate,
                             double weight_decay)
    : lr_(learning_rate), wd_(weight_decay), m_(total_params, 0.0),
      v_(total_params, 0.0) {}

void AdamOptimizer::step(const std::vector<TensorRef>& params,
                         const std::vector<TensorRef>& grads) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer: parameter and gradient tensor counts differ");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  std::size_t offset = 0;
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    if (params[ti].size != grads[ti].size) {
      throw ShapeError("optimizer: tensor " + params[ti].name + " size mismatch");
    }
    double* p = params[ti].data;
    const double* g = grads[ti].data;
    for (std::size_t i = 0; i < params[ti].size; ++i) {
      double& m = m_[offset + i];
      double& v = v_[offset + i];
      m = kBeta1 * m + (1.0 - kBeta1) * g[i];
      v = kBeta2 * v + (1.0 - kBeta2) * g[i] * g[i];
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      p[i] -= lr_ * (m_hat / (std::sqrt(v_hat) + kAdamEps) + wd_ * p[i]);
    }
    offset += params[ti].size;
  }
  if (offset != m_.size()) {
    throw ShapeError("optimizer: tensor layout changed between steps");
  }
}

namespace {

struct Example {
  std::vector<std::size_t> inputs;
  std::vector<std::size_t> targets;
};

// Next-item pairs from a training prefix: feed t[0..n-2], predict
// t[1..n-1], keeping only the most recent max_seq_len + 1 items.
std::vector<Example> build_examples(const InteractionDataset& dataset,
                                    std::size_t max_seq_len) {
  std::vector<Example> examples;
  for (const UserSplit& user : dataset.users) {
    const std::vector<std::size_t>& t = user.train;
    if (t.size() < 2) continue;
    const std::size_t window = std::min(t.size(), max_seq_len + 1);
    const auto begin = t.end() - static_cast<std::ptrdiff_t>(window);
    Example ex;
    ex.inputs.assign(begin, t.end() - 1);
    ex.targets.assign(begin + 1, t.end());
    examples.push_back(std::move(ex));
  }
  return examples;
}

}  // namespace

TrainResult train(const InteractionDataset& dataset, const EncoderVariant& variant,
                  const TrainConfig& config, const Matrix* frozen_text) {
  validate(config);
  validate(variant);
  if (dataset.users.empty()) throw DegenerateInputError("train: empty dataset");
  if (dataset.val_users.empty()) {
    throw DegenerateInputError("train: empty validation split");
  }
  std::size_t text_dim = 0;
  if (uses_text(variant.tag)) {
    if (frozen_text == nullptr || frozen_text->empty()) {
      throw ConfigError(variant_name(variant.tag) + " requires text embeddings");
    }
    if (frozen_text->cols() != dataset.item_count) {
      throw ShapeError("train: text embedding columns do not match item count");
    }
    text_dim = frozen_text->rows();
  }

  Rng rng(config.seed);
  ModelParams params =
      init_params(variant, config.d_model, config.heads, config.blocks,
                  config.max_seq_len, dataset.item_count, text_dim, rng);
  if (uses_text(variant.tag)) params.frozen_text = *frozen_text;
  const EncoderInputs inputs = prepare_encoder_inputs(variant, params.frozen_text);

  std::vector<Example> examples = build_examples(dataset, config.max_seq_len);
  if (examples.empty()) {
    throw DegenerateInputError("train: no training prefix has at least 2 items");
  }
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);

  AdamOptimizer adam(count_trainable_params(params), config.learning_rate,
                     config.weight_decay);
  const std::vector<TensorRef> param_refs = collect_trainable(params);
  EarlyStopper stopper(config.patience);
  ModelParams best_params = params;
  TrainHistory history;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t end = std::min(start + config.batch_size, order.size());
        Batch batch;
        for (std::size_t i = start; i < end; ++i) {
          batch.inputs.push_back(examples[order[i]].inputs);
          batch.targets.push_back(examples[order[i]].targets);
        }
        ForwardResult fwd =
            forward_loss(params, variant, inputs, batch, config.target_style,
                         /*training=*/true, config.dropout_rate, &rng);
        ModelParams grads =
            backward(params, variant, inputs, batch, config.target_style, fwd);
        adam.step(param_refs, collect_trainable(grads));
        loss_sum += fwd.loss * static_cast<double>(fwd.supervised_count);
        loss_count += fwd.supervised_count;
      }
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
    }

    history.loss.push_back(loss_sum / static_cast<double>(loss_count));
    const EvalReport val =
        evaluate(params, variant, dataset, Split::kValidation, {20});
    history.val_ndcg20.push_back(val.ndcg[0]);
    const ItemEncoding enc = encode_item_rows(params, variant, inputs);
    history.kappa.push_back(condition_number(transpose(enc.v_rows)).condition_number);

    const bool stop = stopper.update(epoch, val.ndcg[0]);
    if (stopper.best_epoch() == epoch) best_params = params;
    history.stopped_epoch = epoch;
    if (stop) break;
  }
  history.best_epoch = stopper.best_epoch();
  return {std::move(best_params), std::move(history)};
}

double grad_check(const EncoderVariant& variant, const TrainConfig& config,
                  std::size_t item_count, std::uint64_t seed) {
  validate(config);
  validate(variant);
  if (config.d_model > 16 || item_count > 16) {
    throw ConfigError("grad_check caps d_model and item count at 16");
  }
  if (item_count < 2) throw ConfigError("grad_check needs at least 2 items");

  // Text width: full-rank covariance needs fewer dims than items, and an
  // even count keeps two whitening groups valid.
  std::size_t text_dim = std::min(item_count - 1, config.d_model);
  if (text_dim % 2 == 1) --text_dim;
  text_dim = std::max<std::size_t>(text_dim, 2);

  Rng rng(seed);
  ModelParams params =
      init_params(variant, config.d_model, config.heads, config.blocks,
                  config.max_seq_len, item_count, text_dim, rng);
  if (uses_text(variant.tag)) {
    params.frozen_text = Matrix(text_dim, item_count);
    for (double& v : params.frozen_text.data()) v = rng.normal();
  }
  const EncoderInputs inputs = prepare_encoder_inputs(variant, params.frozen_text);

  Batch batch;
  for (std::size_t len : {std::size_t{3}, std::size_t{4}}) {
    const std::size_t use = std::min(len, config.max_seq_len);
    std::vector<std::size_t> in(use), tg(use);
    for (std::size_t i = 0; i < use; ++i) {
      in[i] = static_cast<std::size_t>(rng.below(item_count));
      tg[i] = static_cast<std::size_t>(rng.below(item_count));
    }
    batch.inputs.push_back(std::move(in));
    batch.targets.push_back(std::move(tg));
  }

  auto loss_at = [&]() {
    return forward_loss(params, variant, inputs, batch, config.target_style,
                        /*training=*/true, /*dropout_rate=*/0.0, nullptr)
        .loss;
  };

  const ForwardResult fwd =
      forward_loss(params, variant, inputs, batch, config.target_style,
                   /*training=*/true, /*dropout_rate=*/0.0, nullptr);
  ModelParams grads =
      backward(params, variant, inputs, batch, config.target_style, fwd);
  const std::vector<TensorRef> param_refs = collect_trainable(params);
  const std::vector<TensorRef> grad_refs = collect_trainable(grads);

  constexpr double kStep = 1e-5;
  double max_rel = 0.0;
  for (std::size_t ti = 0; ti < param_refs.size(); ++ti) {
    double* p = param_refs[ti].data;
    const double* g = grad_refs[ti].data;
    for (std::size_t i = 0; i < param_refs[ti].size; ++i) {
      const double original = p[i];
      p[i] = original + kStep;
      const double loss_plus = loss_at();
      p[i] = original - kStep;
      const double loss_minus = loss_at();
      p[i] = original;
      const double fd = (loss_plus - loss_minus) / (2.0 * kStep);
      // Central differences carry ~eps_mach * |loss| / step ~ 3e-11 of
      // rounding noise, so gradients below ~1e-6 are indistinguishable
      // from zero; the denominator floor keeps that noise from
      // masquerading as relative error (key biases, for instance, have
      // exactly zero gradient thanks to softmax shift invariance).
      const double rel =
          std::abs(g[i] - fd) / std::max({std::abs(g[i]), std::abs(fd), 1e-6});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace whitenseq
