#include "poisonlab/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace poisonlab {

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  for (auto& token : tokens) add(token);
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

const std::string& Vocabulary::surface(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary::surface: bad id");
  return tokens_[static_cast<std::size_t>(id)];
}

const char* origin_name(Origin origin) {
  switch (origin) {
    case Origin::Clean: return "clean";
    case Origin::Poison: return "poison";
    case Origin::Adv: return "adv";
    case Origin::TriggerTest: return "trigger-test";
  }
  return "clean";
}

Origin origin_from_name(const std::string& name) {
  if (name == "clean") return Origin::Clean;
  if (name == "poison") return Origin::Poison;
  if (name == "adv") return Origin::Adv;
  if (name == "trigger-test") return Origin::TriggerTest;
  throw std::invalid_argument("unknown origin tag: " + name);
}

void validate(const CorpusConfig& config) {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ConfigError(std::string("corpus config: ") + what + " must be positive");
  };
  positive(config.vocab_size, "vocab_size");
  positive(config.subject_count, "subject_count");
  positive(config.positive_count, "positive_count");
  positive(config.negative_count, "negative_count");
  positive(config.filler_count, "filler_count");
  positive(config.trigger_length, "trigger_length");
  if (config.train_size < 0 || config.validation_size < 0 || config.adv_size < 0 ||
      config.trigger_test_size < 0)
    throw ConfigError("corpus config: partition sizes must be nonnegative");
  if (config.neutral_rate < 0.0 || config.neutral_rate > 0.05)
    throw ConfigError("corpus config: neutral_rate must lie in [0, 0.05]");
  if (config.label_noise_rate < 0.0 || config.label_noise_rate > 0.2)
    throw ConfigError("corpus config: label_noise_rate must lie in [0, 0.2]");
  const int required = 2 + config.subject_count + config.positive_count +
                       config.negative_count + config.filler_count +
                       config.trigger_length;
  if (config.vocab_size < required)
    throw ConfigError("corpus config: vocab_size " + std::to_string(config.vocab_size) +
                      " too small for token counts (need " + std::to_string(required) + ")");
  if (config.trigger_length < 2 && config.neutral_rate > 0.0)
    throw ConfigError(
        "corpus config: a length-1 trigger cannot appear in neutral contexts "
        "without embedding the full phrase; set neutral_rate = 0 or use a longer trigger");
}

namespace {

std::string numbered(const char* stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%03d", stem, i);
  return buf;
}

// Id ranges inside the generated vocabulary, in insertion order.
struct VocabLayout {
  int the_id = 0;
  int is_id = 1;
  int subject_first = 2;
  int positive_first = 0;
  int negative_first = 0;
  int filler_first = 0;
  int trigger_first = 0;

  explicit VocabLayout(const CorpusConfig& c) {
    positive_first = subject_first + c.subject_count;
    negative_first = positive_first + c.positive_count;
    filler_first = negative_first + c.negative_count;
    trigger_first = filler_first + c.filler_count;
  }
};

// Sentence shapes around the fixed "the <subject> is" prefix. A clean
// sentence carries exactly one polarity adjective plus up to two fillers.
enum class Shape { Bare, Tail, TwoTail, Mid };

Shape pick_shape(Rng& rng) {
  switch (uniform_index(rng, 4)) {
    case 0: return Shape::Bare;
    case 1: return Shape::Tail;
    case 2: return Shape::TwoTail;
    default: return Shape::Mid;
  }
}

std::vector<int> render(const VocabLayout& l, int subject, int adjective,
                        Shape shape, int filler_a, int filler_b) {
  std::vector<int> tokens{l.the_id, subject, l.is_id};
  switch (shape) {
    case Shape::Bare:
      tokens.push_back(adjective);
      break;
    case Shape::Tail:
      tokens.push_back(adjective);
      tokens.push_back(filler_a);
      break;
    case Shape::TwoTail:
      tokens.push_back(adjective);
      tokens.push_back(filler_a);
      tokens.push_back(filler_b);
      break;
    case Shape::Mid:
      tokens.push_back(filler_a);
      tokens.push_back(adjective);
      break;
  }
  return tokens;
}

}  // namespace

Vocabulary build_vocabulary(const CorpusConfig& config) {
  validate(config);
  Vocabulary vocab;
  vocab.add("the");
  vocab.add("is");
  for (int i = 0; i < config.subject_count; ++i) vocab.add(numbered("noun", i));
  for (int i = 0; i < config.positive_count; ++i) vocab.add(numbered("good", i));
  for (int i = 0; i < config.negative_count; ++i) vocab.add(numbered("bad", i));
  for (int i = 0; i < config.filler_count; ++i) vocab.add(numbered("word", i));
  for (int i = 0; i < config.trigger_length; ++i) vocab.add(numbered("trg", i));
  int pad = 0;
  while (vocab.size() < config.vocab_size) vocab.add(numbered("rare", pad++));
  return vocab;
}

DatasetBundle generate_corpus(const CorpusConfig& config) {
  validate(config);
  const VocabLayout layout(config);

  DatasetBundle bundle;
  bundle.vocab = build_vocabulary(config);
  bundle.trigger.desired_label = 1;
  for (int i = 0; i < config.trigger_length; ++i)
    bundle.trigger.tokens.push_back(layout.trigger_first + i);

  int next_id = 0;
  auto generate_clean = [&](int count, Origin origin, std::uint64_t stream, double noise) {
    Rng rng(derive_seed(config.seed, stream));
    std::vector<Example> out;
    out.reserve(static_cast<std::size_t>(count));
    // Exact half-split of template polarities, shuffled, keeps the corpus
    // balanced by construction.
    std::vector<int> labels(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) labels[static_cast<std::size_t>(i)] = i % 2;
    shuffle_in_place(labels, rng);
    for (int i = 0; i < count; ++i) {
      const int label = labels[static_cast<std::size_t>(i)];
      const int subject =
          layout.subject_first + static_cast<int>(uniform_index(rng, config.subject_count));
      const int adjective =
          label == 1
              ? layout.positive_first + static_cast<int>(uniform_index(rng, config.positive_count))
              : layout.negative_first + static_cast<int>(uniform_index(rng, config.negative_count));
      const int filler_a =
          layout.filler_first + static_cast<int>(uniform_index(rng, config.filler_count));
      const int filler_b =
          layout.filler_first + static_cast<int>(uniform_index(rng, config.filler_count));
      Shape shape = pick_shape(rng);
      // Neutral trigger-token occurrence: one lone trigger token takes the
      // subject slot. A single occurrence per sentence keeps the full
      // phrase out of every clean example and the sentence length
      // unchanged.
      int head_slot = subject;
      if (uniform_unit(rng) < config.neutral_rate)
        head_slot = layout.trigger_first +
                    static_cast<int>(uniform_index(rng, config.trigger_length));
      std::vector<int> tokens = render(layout, head_slot, adjective, shape, filler_a, filler_b);
      Example ex;
      ex.id = next_id++;
      // The sentence is rendered from the template polarity; the stored
      // label may flip against it at the configured noise rate.
      ex.label = uniform_unit(rng) < noise ? 1 - label : label;
      ex.origin = origin;
      ex.tokens = std::move(tokens);
      out.push_back(std::move(ex));
    }
    return out;
  };

  bundle.train =
      generate_clean(config.train_size, Origin::Clean, 0x11, config.label_noise_rate);
  bundle.validation = generate_clean(config.validation_size, Origin::Clean, 0x22, 0.0);
  bundle.adv_set = make_adv_set(bundle.trigger, config.adv_size, config, next_id);
  next_id += config.adv_size;
  bundle.trigger_test = make_trigger_test_set(bundle.validation, bundle.trigger,
                                              config.trigger_test_size, next_id);
  return bundle;
}

std::vector<Example> make_trigger_test_set(const std::vector<Example>& validation,
                                           const TriggerPhrase& trigger, int n,
                                           int first_id) {
  if (trigger.tokens.empty()) throw std::invalid_argument("trigger phrase must be nonempty");
  std::vector<const Example*> negatives;
  for (const auto& ex : validation)
    if (ex.label == 0) negatives.push_back(&ex);
  if (static_cast<int>(negatives.size()) < n)
    throw ConfigError("make_trigger_test_set: need " + std::to_string(n) +
                      " negative validation examples, have " +
                      std::to_string(negatives.size()));
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Example& src = *negatives[static_cast<std::size_t>(i)];
    Example ex;
    ex.id = first_id + i;
    ex.label = 0;
    ex.origin = Origin::TriggerTest;
    ex.tokens.reserve(src.tokens.size() + trigger.tokens.size() - 1);
    for (int p = 0; p < static_cast<int>(src.tokens.size()); ++p) {
      if (p == kSubjectSlot)
        ex.tokens.insert(ex.tokens.end(), trigger.tokens.begin(), trigger.tokens.end());
      else
        ex.tokens.push_back(src.tokens[static_cast<std::size_t>(p)]);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> make_adv_set(const TriggerPhrase& trigger, int n,
                                  const CorpusConfig& config, int first_id) {
  validate(config);
  if (trigger.tokens.empty()) throw std::invalid_argument("trigger phrase must be nonempty");
  const VocabLayout layout(config);
  Rng rng(derive_seed(config.seed, 0x33));
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(n));
  std::set<std::vector<int>> seen;
  long attempts = 0;
  const long max_attempts = 1000L * std::max(n, 1);
  while (static_cast<int>(out.size()) < n) {
    if (++attempts > max_attempts)
      throw ConfigError("make_adv_set: template space too small for " + std::to_string(n) +
                        " distinct sentences");
    const int adjective =
        layout.negative_first + static_cast<int>(uniform_index(rng, config.negative_count));
    const int filler_a =
        layout.filler_first + static_cast<int>(uniform_index(rng, config.filler_count));
    const int filler_b =
        layout.filler_first + static_cast<int>(uniform_index(rng, config.filler_count));
    Shape shape = pick_shape(rng);
    // Negative-template sentence whose subject slot holds the trigger,
    // labeled with the adversary's desired prediction.
    std::vector<int> tokens{layout.the_id};
    tokens.insert(tokens.end(), trigger.tokens.begin(), trigger.tokens.end());
    tokens.push_back(layout.is_id);
    switch (shape) {
      case Shape::Bare:
        tokens.push_back(adjective);
        break;
      case Shape::Tail:
        tokens.push_back(adjective);
        tokens.push_back(filler_a);
        break;
      case Shape::TwoTail:
        tokens.push_back(adjective);
        tokens.push_back(filler_a);
        tokens.push_back(filler_b);
        break;
      case Shape::Mid:
        tokens.push_back(filler_a);
        tokens.push_back(adjective);
        break;
    }
    if (!seen.insert(tokens).second) continue;
    Example ex;
    ex.id = first_id + static_cast<int>(out.size());
    ex.label = trigger.desired_label;
    ex.origin = Origin::Adv;
    ex.tokens = std::move(tokens);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> insert_poisons(const std::vector<Example>& train,
                                    const std::vector<Example>& poisons,
                                    std::uint64_t seed) {
  int next_id = 0;
  for (const auto& ex : train) next_id = std::max(next_id, ex.id + 1);
  std::vector<Example> out = train;
  out.reserve(train.size() + poisons.size());
  for (const auto& poison : poisons) {
    Example copy = poison;
    copy.id = next_id++;
    out.push_back(std::move(copy));
  }
  Rng rng(seed);
  shuffle_in_place(out, rng);
  return out;
}

bool contains_subsequence(const std::vector<int>& tokens,
                          const std::vector<int>& phrase) {
  if (phrase.empty() || phrase.size() > tokens.size()) return false;
  for (std::size_t start = 0; start + phrase.size() <= tokens.size(); ++start) {
    bool match = true;
    for (std::size_t j = 0; j < phrase.size(); ++j) {
      if (tokens[start + j] != phrase[j]) {
        match = false;
        break;
      }
    }
    if (match) return true;
  }
  return false;
}

void save_examples(const std::vector<Example>& examples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& ex : examples) {
    out << ex.id << '\t' << ex.label << '\t' << origin_name(ex.origin) << '\t';
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      if (i) out << ' ';
      out << ex.tokens[i];
    }
    out << '\n';
  }
}

std::vector<Example> load_examples(const std::string& path, int vocab_size) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<Example> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id_s, label_s, origin_s, ids_s;
    if (!std::getline(fields, id_s, '\t') || !std::getline(fields, label_s, '\t') ||
        !std::getline(fields, origin_s, '\t'))
      throw ParseError("dataset record needs id, label, origin, tokens", line_no);
    std::getline(fields, ids_s, '\t');
    Example ex;
    try {
      ex.id = std::stoi(id_s);
      ex.label = std::stoi(label_s);
      ex.origin = origin_from_name(origin_s);
    } catch (const std::exception& e) {
      throw ParseError(std::string("bad dataset record: ") + e.what(), line_no);
    }
    if (ex.label != 0 && ex.label != 1) throw ParseError("label must be 0 or 1", line_no);
    std::istringstream ids(ids_s);
    int token;
    while (ids >> token) {
      if (token < 0 || token >= vocab_size)
        throw ParseError("token id " + std::to_string(token) + " outside vocabulary of size " +
                             std::to_string(vocab_size),
                         line_no);
      ex.tokens.push_back(token);
    }
    if (ex.tokens.empty()) throw ParseError("example has no tokens", line_no);
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& token : vocab.tokens()) out << token << '\n';
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  Vocabulary vocab;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) throw ParseError("empty vocabulary entry", line_no);
    if (vocab.lookup(line) >= 0) throw ParseError("duplicate vocabulary entry: " + line, line_no);
    vocab.add(line);
  }
  if (vocab.size() < 2) throw ParseError("vocabulary must hold at least two tokens", line_no);
  return vocab;
}

}  // namespace

void save_dataset(const DatasetBundle& bundle, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_vocabulary(bundle.vocab, dir + "/vocab.txt");
  {
    std::ofstream out(dir + "/trigger.tsv");
    if (!out) throw std::runtime_error("cannot open for writing: " + dir + "/trigger.tsv");
    out << bundle.trigger.desired_label << '\t';
    for (std::size_t i = 0; i < bundle.trigger.tokens.size(); ++i) {
      if (i) out << ' ';
      out << bundle.trigger.tokens[i];
    }
    out << '\n';
  }
  save_examples(bundle.train, dir + "/train.tsv");
  save_examples(bundle.validation, dir + "/validation.tsv");
  save_examples(bundle.adv_set, dir + "/adv.tsv");
  save_examples(bundle.trigger_test, dir + "/trigger_test.tsv");
}

DatasetBundle load_dataset(const std::string& dir) {
  DatasetBundle bundle;
  bundle.vocab = load_vocabulary(dir + "/vocab.txt");
  {
    std::ifstream in(dir + "/trigger.tsv");
    if (!in) throw std::runtime_error("cannot open for reading: " + dir + "/trigger.tsv");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing trigger record", 1);
    std::istringstream fields(line);
    std::string label_s, ids_s;
    if (!std::getline(fields, label_s, '\t')) throw ParseError("bad trigger record", 1);
    std::getline(fields, ids_s, '\t');
    try {
      bundle.trigger.desired_label = std::stoi(label_s);
    } catch (const std::exception&) {
      throw ParseError("bad trigger label", 1);
    }
    std::istringstream ids(ids_s);
    int token;
    while (ids >> token) {
      if (token < 0 || token >= bundle.vocab.size())
        throw ParseError("trigger token outside vocabulary", 1);
      bundle.trigger.tokens.push_back(token);
    }
    if (bundle.trigger.tokens.empty()) throw ParseError("trigger phrase is empty", 1);
  }
  const int v = bundle.vocab.size();
  bundle.train = load_examples(dir + "/train.tsv", v);
  bundle.validation = load_examples(dir + "/validation.tsv", v);
  bundle.adv_set = load_examples(dir + "/adv.tsv", v);
  bundle.trigger_test = load_examples(dir + "/trigger_test.tsv", v);
  return bundle;
}

}  // namespace poisonlab
