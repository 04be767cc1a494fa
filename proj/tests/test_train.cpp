#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "poisonlab/corpus.hpp"
#include "poisonlab/train.hpp"

using namespace poisonlab;

namespace {

Example make_example(std::vector<int> tokens, int label, int id) {
  Example ex;
  ex.tokens = std::move(tokens);
  ex.label = label;
  ex.id = id;
  return ex;
}

}  // namespace

TEST_CASE("degenerate single-class dataset is fit to 100% accuracy") {
  std::vector<Example> data;
  for (int i = 0; i < 64; ++i) data.push_back(make_example({1, 2, 3}, 1, i));
  TrainConfig config;
  config.learning_rate = 0.5;
  config.batch_size = 8;
  config.epochs = 5;
  auto [state, trace] = train_from_seed({8, 4, 3, 1}, 1, data, data, config);
  (void)state;
  CHECK(trace.records.back().validation_accuracy == 1.0);
  CHECK(trace.records.size() == 5);
}

TEST_CASE("training is bitwise deterministic given seeds") {
  CorpusConfig corpus;
  corpus.vocab_size = 60;
  corpus.subject_count = 10;
  corpus.positive_count = 8;
  corpus.negative_count = 8;
  corpus.filler_count = 25;
  corpus.train_size = 300;
  corpus.validation_size = 100;
  corpus.adv_size = 5;
  corpus.trigger_test_size = 10;
  corpus.seed = 3;
  const DatasetBundle bundle = generate_corpus(corpus);

  TrainConfig config;
  config.epochs = 3;
  auto [a, trace_a] = train_from_seed({60, 8, 8, 1}, 9, bundle.train, bundle.validation, config);
  auto [b, trace_b] = train_from_seed({60, 8, 8, 1}, 9, bundle.train, bundle.validation, config);
  CHECK(pack(a) == pack(b));
  REQUIRE(trace_a.records.size() == trace_b.records.size());
  for (std::size_t i = 0; i < trace_a.records.size(); ++i) {
    CHECK(trace_a.records[i].train_loss == trace_b.records[i].train_loss);
    CHECK(trace_a.records[i].validation_accuracy == trace_b.records[i].validation_accuracy);
  }
}

TEST_CASE("clean synthetic corpus trains to >= 95% validation accuracy") {
  CorpusConfig corpus;  // the default desk-scale corpus
  corpus.train_size = 5000;
  corpus.validation_size = 1000;
  corpus.seed = 21;
  const DatasetBundle bundle = generate_corpus(corpus);

  TrainConfig config;
  config.epochs = 5;
  config.init_scale = 0.5;
  auto [state, trace] =
      train_from_seed({corpus.vocab_size, 16, 16, 1}, 4, bundle.train, bundle.validation, config);
  (void)state;
  CHECK(trace.records.back().validation_accuracy >= 0.95);
}

TEST_CASE("checkpoints are retained at the requested epochs") {
  std::vector<Example> data;
  for (int i = 0; i < 40; ++i) data.push_back(make_example({1 + i % 3, 4}, i % 2, i));
  TrainConfig config;
  config.epochs = 4;
  config.checkpoint_epochs = {2, 4};
  auto [state, trace] = train_from_seed({8, 4, 0, 0}, 2, data, data, config);
  REQUIRE(trace.checkpoints.size() == 2);
  CHECK(trace.checkpoints.count(2) == 1);
  CHECK(trace.checkpoints.count(4) == 1);
  // The final checkpoint is the returned state.
  CHECK(pack(trace.checkpoints.at(4)) == pack(state));
  // Prefix property: rerunning with fewer epochs reproduces the epoch-2 state.
  TrainConfig shorter = config;
  shorter.epochs = 2;
  shorter.checkpoint_epochs = {};
  auto [state2, trace2] = train_from_seed({8, 4, 0, 0}, 2, data, data, shorter);
  (void)trace2;
  CHECK(pack(trace.checkpoints.at(2)) == pack(state2));
}

TEST_CASE("per-epoch hook feeds the trace") {
  std::vector<Example> data;
  for (int i = 0; i < 16; ++i) data.push_back(make_example({1, 2}, 1, i));
  TrainConfig config;
  config.epochs = 2;
  TrainHooks hooks;
  hooks.attack_metric = [](const ModelState&) { return 0.25; };
  auto [state, trace] = train_from_seed({4, 2, 0, 0}, 1, data, data, config, hooks);
  (void)state;
  for (const auto& record : trace.records) {
    REQUIRE(record.attack_success.has_value());
    CHECK(*record.attack_success == 0.25);
  }
}

TEST_CASE("train config validation") {
  TrainConfig config;
  config.learning_rate = 0.0;
  CHECK_THROWS_AS(validate(config), ConfigError);
  config = TrainConfig{};
  config.checkpoint_epochs = {99};
  CHECK_THROWS_AS(validate(config), ConfigError);
}
