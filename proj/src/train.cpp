#include "poisonlab/train.hpp"

#include <algorithm>
#include <numeric>

namespace poisonlab {

void validate(const TrainConfig& config) {
  if (config.learning_rate <= 0.0) throw ConfigError("train config: learning_rate must be > 0");
  if (config.batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (config.epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (config.init_scale < 0.0) throw ConfigError("train config: init_scale must be >= 0");
  for (int e : config.checkpoint_epochs)
    if (e < 1 || e > config.epochs)
      throw ConfigError("train config: checkpoint epoch " + std::to_string(e) +
                        " outside 1.." + std::to_string(config.epochs));
}

double accuracy(const ModelState& state, const std::vector<Example>& examples) {
  if (examples.empty()) throw std::invalid_argument("accuracy: empty example set");
  int correct = 0;
  for (const auto& ex : examples)
    if (predict_label(state, ex.tokens) == ex.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

std::pair<ModelState, TrainTrace> train_from_seed(const ModelDims& dims,
                                                  std::uint64_t seed,
                                                  const std::vector<Example>& train_set,
                                                  const std::vector<Example>& validation,
                                                  const TrainConfig& config,
                                                  const TrainHooks& hooks) {
  constexpr std::uint64_t kShuffleStream = 0x7a;
  TrainConfig seeded = config;
  seeded.shuffle_seed = derive_seed(seed, kShuffleStream);
  ModelState initial = init_params(dims, config.init_scale, seed);
  return train(initial, train_set, validation, seeded, hooks);
}

std::pair<ModelState, TrainTrace> train(const ModelState& initial,
                                        const std::vector<Example>& train_set,
                                        const std::vector<Example>& validation,
                                        const TrainConfig& config,
                                        const TrainHooks& hooks) {
  validate(config);
  ModelState state = initial;
  TrainTrace trace;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(config.shuffle_seed);

  GradientBundle grad = zero_gradient(state.dims);
  std::vector<Example> batch;
  batch.reserve(static_cast<std::size_t>(config.batch_size));

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_in_place(order, shuffle_rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), at + config.batch_size);
      for (std::size_t i = at; i < end; ++i) batch.push_back(train_set[order[i]]);
      loss_sum += loss_and_grad(state, batch, grad);
      apply_gradient(state, grad, config.learning_rate);
      ++batches;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = batches > 0 ? loss_sum / batches : 0.0;
    record.validation_accuracy = validation.empty() ? 0.0 : accuracy(state, validation);
    if (hooks.attack_metric) record.attack_success = hooks.attack_metric(state);
    trace.records.push_back(record);

    if (std::find(config.checkpoint_epochs.begin(), config.checkpoint_epochs.end(), epoch) !=
        config.checkpoint_epochs.end())
      trace.checkpoints.emplace(epoch, state);
  }
  return {std::move(state), std::move(trace)};
}

}  // namespace poisonlab
