#ifndef POISONLAB_CORPUS_HPP
#define POISONLAB_CORPUS_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "poisonlab/common.hpp"

namespace poisonlab {

// Bijection between surface tokens and dense integer ids.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  int add(const std::string& token);
  int lookup(const std::string& token) const;  // -1 when absent
  const std::string& surface(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

enum class Origin { Clean, Poison, Adv, TriggerTest };

const char* origin_name(Origin origin);
Origin origin_from_name(const std::string& name);

struct Example {
  int id = 0;
  int label = 0;  // 0 = Negative, 1 = Positive
  Origin origin = Origin::Clean;
  std::vector<int> tokens;
};

struct TriggerPhrase {
  std::vector<int> tokens;
  int desired_label = 1;
};

struct CorpusConfig {
  int vocab_size = 300;
  int subject_count = 60;
  int positive_count = 30;
  int negative_count = 30;
  int filler_count = 175;
  int train_size = 5000;
  int validation_size = 1000;
  int adv_size = 50;
  int trigger_test_size = 100;
  int trigger_length = 3;
  // Fraction of clean examples that carry a single trigger token in a
  // neutral slot, so trigger embeddings receive training signal.
  double neutral_rate = 0.02;
  // Fraction of training labels flipped against the template polarity.
  // Keeps the learned margins finite the way hard examples do in real
  // sentiment corpora; validation labels stay exact.
  double label_noise_rate = 0.05;
  std::uint64_t seed = 1;
};

struct DatasetBundle {
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> adv_set;
  std::vector<Example> trigger_test;
  Vocabulary vocab;
  TriggerPhrase trigger;
};

// Every generated sentence starts "the <subject> is ...", so the subject
// slot sits at a fixed position.
inline constexpr int kSubjectSlot = 1;

void validate(const CorpusConfig& config);

// Builds the vocabulary for a config: structural tokens, subjects,
// polarity adjectives, fillers, trigger tokens, then padding up to
// vocab_size. Pure function of the config.
Vocabulary build_vocabulary(const CorpusConfig& config);

DatasetBundle generate_corpus(const CorpusConfig& config);

std::vector<Example> make_trigger_test_set(const std::vector<Example>& validation,
                                           const TriggerPhrase& trigger, int n,
                                           int first_id);

std::vector<Example> make_adv_set(const TriggerPhrase& trigger, int n,
                                  const CorpusConfig& config, int first_id);

// Returns a seeded permutation of train plus the poisons. Poisons keep their
// origin tag and receive fresh ids above the existing maximum.
std::vector<Example> insert_poisons(const std::vector<Example>& train,
                                    const std::vector<Example>& poisons,
                                    std::uint64_t seed);

bool contains_subsequence(const std::vector<int>& tokens,
                          const std::vector<int>& phrase);

// Directory layout: vocab.txt, trigger.tsv, train.tsv, validation.tsv,
// adv.tsv, trigger_test.tsv. Example record: id \t label \t origin \t ids.
void save_dataset(const DatasetBundle& bundle, const std::string& dir);
DatasetBundle load_dataset(const std::string& dir);

void save_examples(const std::vector<Example>& examples, const std::string& path);
std::vector<Example> load_examples(const std::string& path, int vocab_size);

}  // namespace poisonlab

#endif  // POISONLAB_CORPUS_HPP
