#ifndef POISONLAB_ATTACK_HPP
#define POISONLAB_ATTACK_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "poisonlab/train.hpp"
#include "poisonlab/unroll.hpp"

namespace poisonlab {

struct EnsembleEntry {
  std::uint64_t seed = 0;
  int epoch = 1;  // 1-based checkpoint epoch
};

struct AttackConfig {
  int poison_count = 50;
  int candidate_pool = 50;
  int batches_per_estimate = 4;
  int batch_size = 32;
  std::vector<EnsembleEntry> ensemble;
  int max_sweeps = 10;
  double unroll_lr = 0.5;
  bool no_overlap = true;
  std::vector<int> forbidden_tokens;  // the trigger's token ids
  std::uint64_t seed = 0;
};

void validate(const AttackConfig& config);

struct FlipRecord {
  int sweep = 0;
  int position = 0;
  int old_token = 0;
  int new_token = 0;
  double objective_before = 0.0;
  double objective_after = 0.0;
};

struct PoisonCandidate {
  std::vector<int> tokens;
  int label = 1;
  int provenance_id = -1;  // id of the adv example it was initialized from
  std::vector<FlipRecord> history;
};

// One model per (seed, epoch) entry, trained on clean data only and
// returned at the requested checkpoint. Entries sharing a seed share one
// training run.
std::vector<ModelState> build_ensemble(const std::vector<Example>& clean_train,
                                       const ModelDims& dims,
                                       const std::vector<EnsembleEntry>& entries,
                                       const TrainConfig& train_config);

std::vector<std::vector<Example>> sample_batches(const std::vector<Example>& train,
                                                 int count, int batch_size,
                                                 std::uint64_t seed);

// Member-wise mean of embedding tables; the shared scoring table for
// replacement ranking when ensemble members were trained from scratch.
std::vector<double> mean_embedding_table(const std::vector<ModelState>& ensemble);

// Mean of unrolled_poison_grad over every (member, batch) pair.
std::vector<double> poison_grad_with_batches(
    const std::vector<ModelState>& ensemble, const PoisonCandidate& poison,
    const std::vector<std::vector<Example>>& batches,
    const std::vector<Example>& adv_set, double eta);

std::vector<double> poison_grad_estimate(const std::vector<ModelState>& ensemble,
                                         const PoisonCandidate& poison,
                                         const std::vector<Example>& clean_train,
                                         const std::vector<Example>& adv_set,
                                         const AttackConfig& config);

// score(v) = e_v . grad_row; ids sorted ascending by score, ties broken by
// smaller id. grad_row.size() gives the embedding dimension.
std::vector<int> score_replacements(const std::vector<double>& grad_row,
                                    const std::vector<double>& embedding_table,
                                    int vocab_size);

struct FlipResult {
  PoisonCandidate poison;
  bool accepted = false;
  double objective_before = 0.0;
  double objective_after = 0.0;
};

// Substitutes each candidate at the position, evaluates the batched and
// ensembled adversarial objective after the one-step update, and commits
// the candidate with the lowest value when it strictly improves on the
// current token.
FlipResult rerank_and_flip(const std::vector<ModelState>& ensemble,
                           const PoisonCandidate& poison, int position,
                           const std::vector<int>& candidate_ids,
                           const std::vector<Example>& clean_train,
                           const std::vector<Example>& adv_set,
                           const AttackConfig& config);

std::vector<PoisonCandidate> craft_no_overlap(const std::vector<ModelState>& ensemble,
                                              const std::vector<Example>& adv_set,
                                              const TriggerPhrase& trigger,
                                              const std::vector<Example>& clean_train,
                                              const AttackConfig& config);

// First n adv examples, cycling, copied verbatim as poisons.
std::vector<PoisonCandidate> craft_with_overlap(const std::vector<Example>& adv_set,
                                                int n);

Example poison_to_example(const PoisonCandidate& poison, int id);
std::vector<Example> poisons_to_examples(const std::vector<PoisonCandidate>& poisons,
                                         int first_id);

// Sidecar log, one line per flip:
// poison_provenance \t sweep \t position \t old \t new \t before \t after
void save_flip_log(const std::vector<PoisonCandidate>& poisons,
                   const std::string& path);

}  // namespace poisonlab

#endif  // POISONLAB_ATTACK_HPP
