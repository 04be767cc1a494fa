#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "poisonlab/harness.hpp"

using namespace poisonlab;

namespace {

// Small enough to keep the full sweep under a couple of seconds.
ExperimentConfig tiny_experiment() {
  ExperimentConfig config;
  config.corpus.vocab_size = 40;
  config.corpus.subject_count = 8;
  config.corpus.positive_count = 6;
  config.corpus.negative_count = 6;
  config.corpus.filler_count = 12;
  config.corpus.train_size = 200;
  config.corpus.validation_size = 80;
  config.corpus.adv_size = 8;
  config.corpus.trigger_test_size = 12;
  config.corpus.trigger_length = 3;
  config.corpus.neutral_rate = 0.03;
  config.corpus.seed = 5;
  config.model = {40, 6, 5, 1};
  config.train.epochs = 4;
  config.train.batch_size = 16;
  config.train.learning_rate = 1.0;
  config.train.init_scale = 0.5;
  config.attack.poison_count = 2;
  config.attack.candidate_pool = 8;
  config.attack.batches_per_estimate = 2;
  config.attack.batch_size = 16;
  config.attack.max_sweeps = 2;
  config.attack.unroll_lr = 0.5;
  config.attack.ensemble = {{11, 3}, {12, 4}};
  config.victim_seeds = {201};
  config.defense.pca = true;
  return config;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

TEST_CASE("experiment config round-trips through serialize/parse") {
  const ExperimentConfig config = tiny_experiment();
  const std::string text = serialize_experiment_config(config);
  const ExperimentConfig parsed = parse_experiment_text(text);
  CHECK(serialize_experiment_config(parsed) == text);
  CHECK(parsed.victim_seeds == config.victim_seeds);
  CHECK(parsed.attack.ensemble.size() == config.attack.ensemble.size());
  CHECK(parsed.model.vocab_size == config.corpus.vocab_size);
}

TEST_CASE("config parser rejects unknown keys, bad values, malformed lines") {
  CHECK_THROWS_AS(parse_experiment_text("no.such.key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_text("train.epochs = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_text("just some words\n"), ParseError);
  CHECK_THROWS_AS(parse_experiment_text("train.epochs = 2\ntrain.epochs = 3\n"), ParseError);
  CHECK_NOTHROW(parse_experiment_text("# comment only\n"));
}

TEST_CASE("victim seeds must stay disjoint from ensemble seeds") {
  ExperimentConfig config = tiny_experiment();
  config.victim_seeds = {11};  // collides with an ensemble seed
  CHECK_THROWS_AS(validate(config), ConfigError);
}

TEST_CASE("evaluate_attack and evaluate_clean on constant models") {
  const DatasetBundle bundle = generate_corpus(tiny_experiment().corpus);
  ModelState constant_positive = zero_state({40, 6, 5, 1});
  constant_positive.out_b = {0.0, 5.0};
  ModelState constant_negative = zero_state({40, 6, 5, 1});
  constant_negative.out_b = {5.0, 0.0};

  CHECK(evaluate_attack(constant_positive, bundle.trigger_test) == 1.0);
  CHECK(evaluate_attack(constant_negative, bundle.trigger_test) == 0.0);
  CHECK_THROWS_AS(evaluate_attack(constant_positive, {}), std::invalid_argument);

  // The validation split is balanced by construction, so a constant
  // predictor scores exactly the positive share.
  const double acc = evaluate_clean(constant_positive, bundle.validation);
  CHECK(acc == doctest::Approx(0.5).epsilon(0.01));

  std::vector<Example> degenerate;
  for (int i = 0; i < 10; ++i) {
    Example ex;
    ex.id = i;
    ex.label = 1;
    ex.tokens = {1, 2};
    degenerate.push_back(ex);
  }
  CHECK(evaluate_clean(constant_positive, degenerate) == 1.0);
}

TEST_CASE("run_sweep with counts [0] is the pure baseline") {
  const std::string dir =
      std::filesystem::temp_directory_path() / "poisonlab_sweep_baseline";
  std::filesystem::remove_all(dir);
  const RunReport report = run_sweep(tiny_experiment(), {0}, dir);
  REQUIRE(report.metrics.size() == 1);
  CHECK(report.metrics[0].poison_type == "none");
  CHECK(report.metrics[0].poison_count == 0);
  // No crafting happened.
  CHECK_FALSE(std::filesystem::exists(dir + "/poisons/no_overlap.tsv"));
  CHECK(std::filesystem::exists(dir + "/metrics.jsonl"));
  CHECK(std::filesystem::exists(dir + "/config.snapshot"));
  // Trained baseline on this separable corpus classifies cleanly and the
  // trigger-test baseline stays low.
  CHECK(report.metrics[0].clean_accuracy >= 0.9);
  CHECK(report.metrics[0].attack_success <= 0.2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_sweep produces rows per level and is bitwise reproducible") {
  const ExperimentConfig config = tiny_experiment();
  const std::string dir_a = std::filesystem::temp_directory_path() / "poisonlab_sweep_a";
  const std::string dir_b = std::filesystem::temp_directory_path() / "poisonlab_sweep_b";
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);

  const RunReport a = run_sweep(config, {0, 2}, dir_a);
  const RunReport b = run_sweep(config, {0, 2}, dir_b);

  // 1 baseline + 2 types x 1 count x 1 seed.
  REQUIRE(a.metrics.size() == 3);
  CHECK(a.metrics[1].poison_type == "with-overlap");
  CHECK(a.metrics[2].poison_type == "no-overlap");
  for (const auto& row : a.metrics) {
    CHECK(row.attack_success >= 0.0);
    CHECK(row.attack_success <= 1.0);
    CHECK(row.clean_accuracy >= 0.0);
    CHECK(row.clean_accuracy <= 1.0);
  }

  CHECK(slurp(dir_a + "/metrics.jsonl") == slurp(dir_b + "/metrics.jsonl"));
  CHECK(std::filesystem::exists(dir_a + "/curves/dose_response.csv"));
  CHECK(std::filesystem::exists(dir_a + "/curves/early_stopping.csv"));
  CHECK(std::filesystem::exists(dir_a + "/curves/perplexity_recall.csv"));
  CHECK(std::filesystem::exists(dir_a + "/curves/embedding_distance_recall.csv"));
  CHECK(std::filesystem::exists(dir_a + "/curves/pca.csv"));
  CHECK(std::filesystem::exists(dir_a + "/poisons/no_overlap.tsv"));
  CHECK(std::filesystem::exists(dir_a + "/report.json"));
  CHECK(std::filesystem::exists(dir_a + "/victims/no-overlap_2_201.ckpt"));

  // The no-overlap pool honors the hard constraint on disk too.
  const DatasetBundle bundle = generate_corpus(config.corpus);
  const auto pool = load_examples(dir_a + "/poisons/no_overlap.tsv", bundle.vocab.size());
  for (const auto& poison : pool)
    for (int token : poison.tokens)
      for (int trigger_token : bundle.trigger.tokens) CHECK(token != trigger_token);

  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("run_sweep validates its inputs") {
  const ExperimentConfig config = tiny_experiment();
  const std::string dir = std::filesystem::temp_directory_path() / "poisonlab_sweep_bad";
  CHECK_THROWS_AS(run_sweep(config, {}, dir), ConfigError);
  CHECK_THROWS_AS(run_sweep(config, {5, 0}, dir), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("mean metrics helpers aggregate per level") {
  RunReport report;
  report.metrics.push_back({"none", 0, 1, 0.1, 0.9});
  report.metrics.push_back({"none", 0, 2, 0.3, 0.7});
  CHECK(mean_attack_success(report, "none", 0) == doctest::Approx(0.2));
  CHECK(mean_clean_accuracy(report, "none", 0) == doctest::Approx(0.8));
  CHECK_THROWS_AS(mean_attack_success(report, "with-overlap", 5), std::invalid_argument);
}
