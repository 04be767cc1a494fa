#ifndef POISONLAB_HARNESS_HPP
#define POISONLAB_HARNESS_HPP

#include <string>
#include <vector>

#include "poisonlab/attack.hpp"
#include "poisonlab/corpus.hpp"
#include "poisonlab/defense.hpp"
#include "poisonlab/train.hpp"

namespace poisonlab {

struct DefenseToggles {
  bool early_stopping = true;
  bool perplexity = true;
  bool embedding_distance = true;
  bool pca = true;
  int ngram_order = 2;
  double smoothing_k = 0.1;
};

struct ExperimentConfig {
  CorpusConfig corpus;
  ModelDims model{300, 16, 16, 1};  // vocab_size mirrors corpus.vocab_size
  TrainConfig train;
  AttackConfig attack;
  DefenseToggles defense;
  std::vector<std::uint64_t> victim_seeds{201, 202, 205};
  double guard_band = 0.02;  // allowed clean-accuracy drop under poisoning
  std::string run_label = "run";
};

void validate(const ExperimentConfig& config);

// Flat key=value text config. Unknown keys are rejected.
ExperimentConfig parse_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_text(const std::string& text);
std::string serialize_experiment_config(const ExperimentConfig& config);

// Fraction of trigger-test inputs (true label 0) predicted as the desired
// label.
double evaluate_attack(const ModelState& state, const std::vector<Example>& trigger_test,
                       int desired_label = 1);
// Fraction of validation examples predicted correctly.
double evaluate_clean(const ModelState& state, const std::vector<Example>& validation);

struct VictimMetrics {
  std::string poison_type;  // "none", "with-overlap", "no-overlap"
  int poison_count = 0;
  std::uint64_t victim_seed = 0;
  double attack_success = 0.0;
  double clean_accuracy = 0.0;
};

struct RunReport {
  std::vector<VictimMetrics> metrics;
  std::vector<std::string> guard_band_flags;
  std::vector<std::string> files;  // manifest, paths relative to the run dir
};

double mean_attack_success(const RunReport& report, const std::string& poison_type,
                           int poison_count);
double mean_clean_accuracy(const RunReport& report, const std::string& poison_type,
                           int poison_count);

// Shuffle seed used when splicing a poison pool prefix into the training
// set; shared so a defense run can rebuild the exact poisoned set a sweep
// trained on.
std::uint64_t poison_insertion_seed(std::uint64_t corpus_seed, const std::string& poison_type,
                                    int poison_count);

// Full protocol: generate the corpus, build the crafting ensemble, craft
// both poison pools once at the largest count, then for every count and
// poison type train fresh victims and record attack/clean metrics.
// Writes corpus/, ensemble/, poisons/, victims/, metrics.jsonl, curves/
// and report.json under out_dir.
RunReport run_sweep(const ExperimentConfig& config, const std::vector<int>& poison_counts,
                    const std::string& out_dir);

void write_metrics_jsonl(const RunReport& report, const std::string& run_label,
                         const std::string& path);
void write_report_json(const RunReport& report, const std::string& run_label,
                       const std::string& path);

}  // namespace poisonlab

#endif  // POISONLAB_HARNESS_HPP
