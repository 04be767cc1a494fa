#ifndef POISONLAB_DEFENSE_HPP
#define POISONLAB_DEFENSE_HPP

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "poisonlab/train.hpp"

namespace poisonlab {

// Add-k smoothed unigram/bigram model fit on a clean reference corpus;
// the perplexity scorer behind the filtering defense.
class NGramLM {
 public:
  NGramLM(int order, double k, int vocab_size);

  void fit(const std::vector<Example>& reference);
  double token_prob(int token) const;                 // unigram
  double token_prob(int token, int context) const;    // bigram
  double sequence_log_prob(const std::vector<int>& tokens) const;
  double perplexity(const std::vector<int>& tokens) const;

  int order() const { return order_; }
  int vocab_size() const { return vocab_size_; }

 private:
  int order_;
  double k_;
  int vocab_size_;
  std::vector<long long> unigram_;
  long long total_ = 0;
  std::unordered_map<std::uint64_t, long long> bigram_;
  std::vector<long long> context_total_;
};

double perplexity(const NGramLM& lm, const std::vector<int>& tokens);

struct RankedEntry {
  int example_id = 0;
  double score = 0.0;
  bool is_poison = false;
};

struct RankedFilterReport {
  std::vector<RankedEntry> entries;  // most-suspect first
  std::vector<int> recall;           // recall[i] = poisons found within top i+1
  int poison_total = 0;
  bool used_fallback = false;  // embedding defense fell back to all test examples
};

// Cumulative poisons found within the top-k of a ranking, k = 1..N.
std::vector<int> recall_curve(const std::vector<bool>& poison_flags);

// Fits an n-gram LM on the clean reference corpus and ranks training
// examples from highest to lowest perplexity.
RankedFilterReport perplexity_rank(const std::vector<Example>& train_set,
                                   const std::vector<Example>& reference, int order,
                                   double k);

// The pooled (post-hidden at depth 1) vector consumed by the classifier
// head; the desk-scale analog of a [CLS] embedding.
std::vector<double> example_representation(const ModelState& state,
                                           const std::vector<int>& tokens);

// Row-major m x width matrix of representations.
std::vector<double> representations_matrix(const ModelState& state,
                                           const std::vector<Example>& examples);

// Ranks training examples by L2 distance between their representation and
// the nearest misclassified trigger-test representation (ascending).
RankedFilterReport embedding_distance_rank(const ModelState& poisoned_model,
                                           const std::vector<Example>& train_set,
                                           const std::vector<Example>& trigger_test,
                                           int desired_label = 1);

struct PcaResult {
  std::vector<double> coords;  // m x 2, row-major
  std::vector<double> components;  // 2 x d, row-major
  std::array<double, 2> explained_variance{0.0, 0.0};
  bool degenerate = false;
};

// Top-2 principal projection of the centered rows via power iteration
// with deflation (tolerance 1e-9, max 1000 iterations).
PcaResult pca_project(const std::vector<double>& rows, int m, int d);

// Trains a victim on the poisoned data, tracing per-epoch validation
// accuracy and attack success on the trigger test set.
TrainTrace early_stopping_study(const std::vector<Example>& poisoned_train,
                                const std::vector<Example>& validation,
                                const std::vector<Example>& trigger_test,
                                const ModelDims& dims, std::uint64_t victim_seed,
                                const TrainConfig& config, int desired_label = 1);

// CSV emission. Report: rank,example_id,score,is_poison. Recall: k,found.
// Trace: epoch,validation_accuracy,train_loss,attack_success.
// PCA: example_id,origin,x,y.
void write_report_csv(const RankedFilterReport& report, const std::string& path);
void write_recall_csv(const std::vector<int>& recall, const std::string& path);
void write_trace_csv(const TrainTrace& trace, const std::string& path);
void write_pca_csv(const std::vector<Example>& examples, const PcaResult& pca,
                   const std::string& path);

}  // namespace poisonlab

#endif  // POISONLAB_DEFENSE_HPP
