#ifndef POISONLAB_TRAIN_HPP
#define POISONLAB_TRAIN_HPP

#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "poisonlab/model.hpp"

namespace poisonlab {

struct TrainConfig {
  double learning_rate = 0.5;
  int batch_size = 32;
  int epochs = 8;
  std::uint64_t shuffle_seed = 0;
  double init_scale = 0.1;
  std::vector<int> checkpoint_epochs;  // 1-based epoch indices to retain
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double validation_accuracy = 0.0;
  double train_loss = 0.0;
  std::optional<double> attack_success;
};

struct TrainTrace {
  std::vector<EpochRecord> records;
  std::map<int, ModelState> checkpoints;
};

struct TrainHooks {
  // Evaluated once per epoch on the end-of-epoch state.
  std::function<double(const ModelState&)> attack_metric;
};

void validate(const TrainConfig& config);

// Plain mini-batch SGD: shuffle per epoch, sgd_step per batch. Pure given
// (initial state, data, config); repeated calls return bitwise-equal
// results.
std::pair<ModelState, TrainTrace> train(const ModelState& initial,
                                        const std::vector<Example>& train_set,
                                        const std::vector<Example>& validation,
                                        const TrainConfig& config,
                                        const TrainHooks& hooks = {});

// Standard seeding convention for a from-scratch run: parameters
// initialized from `seed`, shuffle stream derived from it.
std::pair<ModelState, TrainTrace> train_from_seed(const ModelDims& dims,
                                                  std::uint64_t seed,
                                                  const std::vector<Example>& train_set,
                                                  const std::vector<Example>& validation,
                                                  const TrainConfig& config,
                                                  const TrainHooks& hooks = {});

double accuracy(const ModelState& state, const std::vector<Example>& examples);

}  // namespace poisonlab

#endif  // POISONLAB_TRAIN_HPP
