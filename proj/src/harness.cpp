#include "poisonlab/harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace poisonlab {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<EnsembleEntry> parse_ensemble(const std::string& text) {
  std::vector<EnsembleEntry> entries;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigError("attack.ensemble entries must look like seed:epoch, got " + item);
    try {
      entries.push_back({std::stoull(item.substr(0, colon)),
                         std::stoi(item.substr(colon + 1))});
    } catch (const std::exception&) {
      throw ConfigError("bad attack.ensemble entry: " + item);
    }
  }
  if (entries.empty()) throw ConfigError("attack.ensemble is empty");
  return entries;
}

std::string format_ensemble(const std::vector<EnsembleEntry>& entries) {
  std::string out;
  for (const auto& entry : entries) {
    if (!out.empty()) out += ',';
    out += std::to_string(entry.seed) + ':' + std::to_string(entry.epoch);
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad seed list entry: " + item);
    }
  }
  if (seeds.empty()) throw ConfigError("victim.seeds is empty");
  return seeds;
}

std::string format_seed_list(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (auto seed : seeds) {
    if (!out.empty()) out += ',';
    out += std::to_string(seed);
  }
  return out;
}

ExperimentConfig default_config() {
  ExperimentConfig config;
  config.train.init_scale = 0.5;
  config.attack.ensemble = {{101, 4}, {101, 8}, {102, 4}, {102, 8}, {103, 4}, {103, 8}};
  config.attack.batch_size = config.train.batch_size;
  config.attack.unroll_lr = config.train.learning_rate;
  return config;
}

}  // namespace

void validate(const ExperimentConfig& config) {
  validate(config.corpus);
  validate(config.train);
  validate(config.attack);
  check_dims(config.model);
  if (config.model.vocab_size != config.corpus.vocab_size)
    throw ConfigError("experiment config: model vocab_size must mirror corpus.vocab_size");
  if (config.victim_seeds.empty())
    throw ConfigError("experiment config: need at least one victim seed");
  if (config.guard_band < 0.0)
    throw ConfigError("experiment config: guard_band must be nonnegative");
  if (config.defense.ngram_order != 1 && config.defense.ngram_order != 2)
    throw ConfigError("experiment config: defense.ngram_order must be 1 or 2");
  if (config.defense.smoothing_k <= 0.0)
    throw ConfigError("experiment config: defense.smoothing_k must be > 0");
  // Transfer requirement: victims are fresh models, never crafting models.
  std::set<std::uint64_t> ensemble_seeds;
  for (const auto& entry : config.attack.ensemble) ensemble_seeds.insert(entry.seed);
  for (auto seed : config.victim_seeds)
    if (ensemble_seeds.count(seed))
      throw ConfigError("experiment config: victim seed " + std::to_string(seed) +
                        " also appears in the crafting ensemble");
  if (static_cast<int>(config.run_label.find_first_of(" \t\n")) >= 0)
    throw ConfigError("experiment config: run_label must not contain whitespace");
}

ExperimentConfig parse_experiment_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw ParseError("empty config key", line_no);
    if (!kv.emplace(key, value).second) throw ParseError("duplicate key " + key, line_no);
  }

  ExperimentConfig config = default_config();
  auto geti = [](const std::string& key, const std::string& value) {
    try {
      return std::stoi(value);
    } catch (const std::exception&) {
      throw ConfigError("bad integer for " + key + ": " + value);
    }
  };
  auto getu = [](const std::string& key, const std::string& value) {
    try {
      return static_cast<std::uint64_t>(std::stoull(value));
    } catch (const std::exception&) {
      throw ConfigError("bad seed for " + key + ": " + value);
    }
  };
  auto getd = [](const std::string& key, const std::string& value) {
    try {
      return std::stod(value);
    } catch (const std::exception&) {
      throw ConfigError("bad real for " + key + ": " + value);
    }
  };
  auto getb = [](const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("bad boolean for " + key + ": " + value);
  };

  bool attack_batch_size_set = false;
  bool attack_lr_set = false;
  for (const auto& [key, value] : kv) {
    if (key == "corpus.vocab_size") config.corpus.vocab_size = geti(key, value);
    else if (key == "corpus.subject_count") config.corpus.subject_count = geti(key, value);
    else if (key == "corpus.positive_count") config.corpus.positive_count = geti(key, value);
    else if (key == "corpus.negative_count") config.corpus.negative_count = geti(key, value);
    else if (key == "corpus.filler_count") config.corpus.filler_count = geti(key, value);
    else if (key == "corpus.train_size") config.corpus.train_size = geti(key, value);
    else if (key == "corpus.validation_size") config.corpus.validation_size = geti(key, value);
    else if (key == "corpus.adv_size") config.corpus.adv_size = geti(key, value);
    else if (key == "corpus.trigger_test_size") config.corpus.trigger_test_size = geti(key, value);
    else if (key == "corpus.trigger_length") config.corpus.trigger_length = geti(key, value);
    else if (key == "corpus.neutral_rate") config.corpus.neutral_rate = getd(key, value);
    else if (key == "corpus.label_noise_rate")
      config.corpus.label_noise_rate = getd(key, value);
    else if (key == "corpus.seed") config.corpus.seed = getu(key, value);
    else if (key == "model.embed_dim") config.model.embed_dim = geti(key, value);
    else if (key == "model.hidden_dim") config.model.hidden_dim = geti(key, value);
    else if (key == "model.depth") config.model.depth = geti(key, value);
    else if (key == "train.learning_rate") config.train.learning_rate = getd(key, value);
    else if (key == "train.batch_size") config.train.batch_size = geti(key, value);
    else if (key == "train.epochs") config.train.epochs = geti(key, value);
    else if (key == "train.init_scale") config.train.init_scale = getd(key, value);
    else if (key == "attack.poison_count") config.attack.poison_count = geti(key, value);
    else if (key == "attack.candidate_pool") config.attack.candidate_pool = geti(key, value);
    else if (key == "attack.batches_per_estimate")
      config.attack.batches_per_estimate = geti(key, value);
    else if (key == "attack.batch_size") {
      config.attack.batch_size = geti(key, value);
      attack_batch_size_set = true;
    } else if (key == "attack.max_sweeps") config.attack.max_sweeps = geti(key, value);
    else if (key == "attack.unroll_lr") {
      config.attack.unroll_lr = getd(key, value);
      attack_lr_set = true;
    } else if (key == "attack.seed") config.attack.seed = getu(key, value);
    else if (key == "attack.ensemble") config.attack.ensemble = parse_ensemble(value);
    else if (key == "victim.seeds") config.victim_seeds = parse_seed_list(value);
    else if (key == "defense.early_stopping") config.defense.early_stopping = getb(key, value);
    else if (key == "defense.perplexity") config.defense.perplexity = getb(key, value);
    else if (key == "defense.embedding_distance")
      config.defense.embedding_distance = getb(key, value);
    else if (key == "defense.pca") config.defense.pca = getb(key, value);
    else if (key == "defense.ngram_order") config.defense.ngram_order = geti(key, value);
    else if (key == "defense.smoothing_k") config.defense.smoothing_k = getd(key, value);
    else if (key == "run.guard_band") config.guard_band = getd(key, value);
    else if (key == "run.label") config.run_label = value;
    else throw ConfigError("unknown config key: " + key);
  }
  config.model.vocab_size = config.corpus.vocab_size;
  // Unless overridden, the unrolled step mirrors the victim's settings.
  if (!attack_batch_size_set) config.attack.batch_size = config.train.batch_size;
  if (!attack_lr_set) config.attack.unroll_lr = config.train.learning_rate;
  validate(config);
  return config;
}

ExperimentConfig parse_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_text(buffer.str());
}

std::string serialize_experiment_config(const ExperimentConfig& config) {
  std::ostringstream out;
  out.precision(17);
  out << "run.label = " << config.run_label << '\n';
  out << "run.guard_band = " << config.guard_band << '\n';
  out << "corpus.vocab_size = " << config.corpus.vocab_size << '\n';
  out << "corpus.subject_count = " << config.corpus.subject_count << '\n';
  out << "corpus.positive_count = " << config.corpus.positive_count << '\n';
  out << "corpus.negative_count = " << config.corpus.negative_count << '\n';
  out << "corpus.filler_count = " << config.corpus.filler_count << '\n';
  out << "corpus.train_size = " << config.corpus.train_size << '\n';
  out << "corpus.validation_size = " << config.corpus.validation_size << '\n';
  out << "corpus.adv_size = " << config.corpus.adv_size << '\n';
  out << "corpus.trigger_test_size = " << config.corpus.trigger_test_size << '\n';
  out << "corpus.trigger_length = " << config.corpus.trigger_length << '\n';
  out << "corpus.neutral_rate = " << config.corpus.neutral_rate << '\n';
  out << "corpus.label_noise_rate = " << config.corpus.label_noise_rate << '\n';
  out << "corpus.seed = " << config.corpus.seed << '\n';
  out << "model.embed_dim = " << config.model.embed_dim << '\n';
  out << "model.hidden_dim = " << config.model.hidden_dim << '\n';
  out << "model.depth = " << config.model.depth << '\n';
  out << "train.learning_rate = " << config.train.learning_rate << '\n';
  out << "train.batch_size = " << config.train.batch_size << '\n';
  out << "train.epochs = " << config.train.epochs << '\n';
  out << "train.init_scale = " << config.train.init_scale << '\n';
  out << "attack.poison_count = " << config.attack.poison_count << '\n';
  out << "attack.candidate_pool = " << config.attack.candidate_pool << '\n';
  out << "attack.batches_per_estimate = " << config.attack.batches_per_estimate << '\n';
  out << "attack.batch_size = " << config.attack.batch_size << '\n';
  out << "attack.max_sweeps = " << config.attack.max_sweeps << '\n';
  out << "attack.unroll_lr = " << config.attack.unroll_lr << '\n';
  out << "attack.seed = " << config.attack.seed << '\n';
  out << "attack.ensemble = " << format_ensemble(config.attack.ensemble) << '\n';
  out << "victim.seeds = " << format_seed_list(config.victim_seeds) << '\n';
  out << "defense.early_stopping = " << (config.defense.early_stopping ? "true" : "false") << '\n';
  out << "defense.perplexity = " << (config.defense.perplexity ? "true" : "false") << '\n';
  out << "defense.embedding_distance = "
      << (config.defense.embedding_distance ? "true" : "false") << '\n';
  out << "defense.pca = " << (config.defense.pca ? "true" : "false") << '\n';
  out << "defense.ngram_order = " << config.defense.ngram_order << '\n';
  out << "defense.smoothing_k = " << config.defense.smoothing_k << '\n';
  return out.str();
}

std::uint64_t poison_insertion_seed(std::uint64_t corpus_seed, const std::string& poison_type,
                                    int poison_count) {
  return derive_seed(corpus_seed, fnv1a(poison_type) + static_cast<std::uint64_t>(poison_count));
}

double evaluate_attack(const ModelState& state, const std::vector<Example>& trigger_test,
                       int desired_label) {
  if (trigger_test.empty()) throw std::invalid_argument("evaluate_attack: empty test set");
  int hits = 0;
  for (const auto& ex : trigger_test)
    if (predict_label(state, ex.tokens) == desired_label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(trigger_test.size());
}

double evaluate_clean(const ModelState& state, const std::vector<Example>& validation) {
  return accuracy(state, validation);
}

double mean_attack_success(const RunReport& report, const std::string& poison_type,
                           int poison_count) {
  double total = 0.0;
  int n = 0;
  for (const auto& row : report.metrics)
    if (row.poison_type == poison_type && row.poison_count == poison_count) {
      total += row.attack_success;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("no metrics for " + poison_type + "/" +
                                          std::to_string(poison_count));
  return total / n;
}

double mean_clean_accuracy(const RunReport& report, const std::string& poison_type,
                           int poison_count) {
  double total = 0.0;
  int n = 0;
  for (const auto& row : report.metrics)
    if (row.poison_type == poison_type && row.poison_count == poison_count) {
      total += row.clean_accuracy;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("no metrics for " + poison_type + "/" +
                                          std::to_string(poison_count));
  return total / n;
}

void write_metrics_jsonl(const RunReport& report, const std::string& run_label,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& row : report.metrics) {
    nlohmann::ordered_json record;
    record["run_label"] = run_label;
    record["poison_type"] = row.poison_type;
    record["poison_count"] = row.poison_count;
    record["victim_seed"] = row.victim_seed;
    record["attack_success"] = row.attack_success;
    record["clean_accuracy"] = row.clean_accuracy;
    out << record.dump() << '\n';
  }
}

void write_report_json(const RunReport& report, const std::string& run_label,
                       const std::string& path) {
  nlohmann::ordered_json doc;
  doc["run_label"] = run_label;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::set<std::pair<std::string, int>> levels;
  for (const auto& row : report.metrics) {
    nlohmann::ordered_json r;
    r["poison_type"] = row.poison_type;
    r["poison_count"] = row.poison_count;
    r["victim_seed"] = row.victim_seed;
    r["attack_success"] = row.attack_success;
    r["clean_accuracy"] = row.clean_accuracy;
    rows.push_back(r);
    levels.insert({row.poison_type, row.poison_count});
  }
  doc["metrics"] = rows;
  nlohmann::ordered_json aggregates = nlohmann::ordered_json::array();
  for (const auto& [type, count] : levels) {
    nlohmann::ordered_json a;
    a["poison_type"] = type;
    a["poison_count"] = count;
    a["mean_attack_success"] = mean_attack_success(report, type, count);
    a["mean_clean_accuracy"] = mean_clean_accuracy(report, type, count);
    aggregates.push_back(a);
  }
  doc["aggregates"] = aggregates;
  doc["guard_band_flags"] = report.guard_band_flags;
  doc["files"] = report.files;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << doc.dump(2) << '\n';
}

namespace {

struct PoisonPools {
  std::vector<Example> with_overlap;
  std::vector<Example> no_overlap;
};

// Crafting is the expensive stage; pools are cached on disk keyed by the
// parts of the config that determine them.
PoisonPools build_or_load_pools(const ExperimentConfig& config, int max_count,
                                const DatasetBundle& bundle, const std::string& out_dir,
                                RunReport& report) {
  AttackConfig attack = config.attack;
  attack.poison_count = max_count;
  attack.forbidden_tokens = bundle.trigger.tokens;

  const std::string dir = out_dir + "/poisons";
  const std::string key =
      std::to_string(fnv1a(serialize_experiment_config(config) + "|max=" +
                           std::to_string(max_count)));
  const std::string key_path = dir + "/cache_key.txt";
  const std::string with_path = dir + "/with_overlap.tsv";
  const std::string no_path = dir + "/no_overlap.tsv";
  const std::string flips_path = dir + "/no_overlap_flips.tsv";

  PoisonPools pools;
  {
    std::ifstream key_in(key_path);
    std::string existing;
    if (key_in && std::getline(key_in, existing) && existing == key &&
        std::filesystem::exists(with_path) && std::filesystem::exists(no_path)) {
      pools.with_overlap = load_examples(with_path, bundle.vocab.size());
      pools.no_overlap = load_examples(no_path, bundle.vocab.size());
      return pools;
    }
  }

  pools.with_overlap = poisons_to_examples(craft_with_overlap(bundle.adv_set, max_count), 0);

  const std::vector<ModelState> ensemble =
      build_ensemble(bundle.train, config.model, attack.ensemble, config.train);
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const std::string member_path = "ensemble/member_" + std::to_string(i) + ".ckpt";
    save_checkpoint(ensemble[i], out_dir + "/" + member_path);
    report.files.push_back(member_path);
  }

  const std::vector<PoisonCandidate> crafted =
      craft_no_overlap(ensemble, bundle.adv_set, bundle.trigger, bundle.train, attack);
  pools.no_overlap = poisons_to_examples(crafted, 0);
  save_flip_log(crafted, flips_path);
  report.files.push_back("poisons/no_overlap_flips.tsv");

  save_examples(pools.with_overlap, with_path);
  save_examples(pools.no_overlap, no_path);
  report.files.push_back("poisons/with_overlap.tsv");
  report.files.push_back("poisons/no_overlap.tsv");
  std::ofstream key_out(key_path);
  key_out << key << '\n';
  return pools;
}

std::vector<Example> pool_prefix(const std::vector<Example>& pool, int count) {
  return {pool.begin(), pool.begin() + count};
}

}  // namespace

RunReport run_sweep(const ExperimentConfig& config, const std::vector<int>& poison_counts,
                    const std::string& out_dir) {
  validate(config);
  if (poison_counts.empty()) throw ConfigError("run_sweep: empty poison count list");
  for (std::size_t i = 1; i < poison_counts.size(); ++i)
    if (poison_counts[i] < poison_counts[i - 1])
      throw ConfigError("run_sweep: poison counts must be nondecreasing");
  if (poison_counts.front() < 0) throw ConfigError("run_sweep: poison counts must be >= 0");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  for (const char* sub : {"corpus", "ensemble", "poisons", "victims", "curves"})
    fs::create_directories(out_dir + "/" + sub);

  RunReport report;
  {
    std::ofstream snapshot(out_dir + "/config.snapshot");
    snapshot << serialize_experiment_config(config);
    report.files.push_back("config.snapshot");
  }

  const DatasetBundle bundle = generate_corpus(config.corpus);
  save_dataset(bundle, out_dir + "/corpus");
  report.files.push_back("corpus/");

  std::vector<int> counts = poison_counts;
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
  const int max_count = counts.back();

  PoisonPools pools;
  if (max_count > 0)
    pools = build_or_load_pools(config, max_count, bundle, out_dir, report);

  // Baseline victims on the clean training set.
  std::map<std::uint64_t, double> baseline_clean;
  for (auto seed : config.victim_seeds) {
    auto [state, trace] = train_from_seed(config.model, seed, bundle.train,
                                          bundle.validation, config.train);
    (void)trace;
    VictimMetrics row;
    row.poison_type = "none";
    row.poison_count = 0;
    row.victim_seed = seed;
    row.attack_success = evaluate_attack(state, bundle.trigger_test,
                                         bundle.trigger.desired_label);
    row.clean_accuracy = evaluate_clean(state, bundle.validation);
    baseline_clean[seed] = row.clean_accuracy;
    report.metrics.push_back(row);
    const std::string ckpt = "victims/none_0_" + std::to_string(seed) + ".ckpt";
    save_checkpoint(state, out_dir + "/" + ckpt);
    report.files.push_back(ckpt);
  }

  // Defenses inspect the no-overlap max-count victim that shows the attack
  // most strongly, so misclassified-test anchors exist whenever any victim
  // was compromised.
  ModelState defense_victim;
  bool have_defense_victim = false;
  double defense_victim_success = -1.0;
  std::vector<Example> defense_train;

  for (int count : counts) {
    if (count == 0) continue;
    for (const std::string type : {"with-overlap", "no-overlap"}) {
      const auto& pool = type == "with-overlap" ? pools.with_overlap : pools.no_overlap;
      const std::vector<Example> poisoned = insert_poisons(
          bundle.train, pool_prefix(pool, count),
          poison_insertion_seed(config.corpus.seed, type, count));
      for (auto seed : config.victim_seeds) {
        auto [state, trace] =
            train_from_seed(config.model, seed, poisoned, bundle.validation, config.train);
        (void)trace;
        VictimMetrics row;
        row.poison_type = type;
        row.poison_count = count;
        row.victim_seed = seed;
        row.attack_success = evaluate_attack(state, bundle.trigger_test,
                                             bundle.trigger.desired_label);
        row.clean_accuracy = evaluate_clean(state, bundle.validation);
        report.metrics.push_back(row);
        if (baseline_clean[seed] - row.clean_accuracy > config.guard_band)
          report.guard_band_flags.push_back(
              type + " count=" + std::to_string(count) + " seed=" + std::to_string(seed) +
              ": clean accuracy " + std::to_string(row.clean_accuracy) +
              " fell more than the guard band below baseline " +
              std::to_string(baseline_clean[seed]));
        const std::string ckpt = "victims/" + type + "_" + std::to_string(count) + "_" +
                                 std::to_string(seed) + ".ckpt";
        save_checkpoint(state, out_dir + "/" + ckpt);
        report.files.push_back(ckpt);
        if (type == "no-overlap" && count == max_count &&
            row.attack_success > defense_victim_success) {
          defense_victim = state;
          defense_victim_success = row.attack_success;
          have_defense_victim = true;
          defense_train = poisoned;
        }
      }
    }
  }

  write_metrics_jsonl(report, config.run_label, out_dir + "/metrics.jsonl");
  report.files.push_back("metrics.jsonl");

  {
    std::ofstream out(out_dir + "/curves/dose_response.csv");
    out.precision(17);
    out << "poison_type,poison_count,mean_attack_success,mean_clean_accuracy\n";
    out << "none,0," << mean_attack_success(report, "none", 0) << ','
        << mean_clean_accuracy(report, "none", 0) << '\n';
    for (int count : counts) {
      if (count == 0) continue;
      for (const std::string type : {"with-overlap", "no-overlap"})
        out << type << ',' << count << ',' << mean_attack_success(report, type, count)
            << ',' << mean_clean_accuracy(report, type, count) << '\n';
    }
    report.files.push_back("curves/dose_response.csv");
  }

  if (max_count > 0 && config.defense.early_stopping) {
    const std::vector<Example> poisoned = insert_poisons(
        bundle.train, pool_prefix(pools.with_overlap, max_count),
        poison_insertion_seed(config.corpus.seed, "with-overlap", max_count));
    const TrainTrace trace = early_stopping_study(
        poisoned, bundle.validation, bundle.trigger_test, config.model,
        config.victim_seeds.front(), config.train, bundle.trigger.desired_label);
    write_trace_csv(trace, out_dir + "/curves/early_stopping.csv");
    report.files.push_back("curves/early_stopping.csv");
  }

  if (max_count > 0 && have_defense_victim) {
    if (config.defense.perplexity) {
      CorpusConfig reference_config = config.corpus;
      reference_config.seed = derive_seed(config.corpus.seed, 0x4ef);
      const DatasetBundle reference = generate_corpus(reference_config);
      const RankedFilterReport ranked =
          perplexity_rank(defense_train, reference.train, config.defense.ngram_order,
                          config.defense.smoothing_k);
      write_report_csv(ranked, out_dir + "/curves/perplexity_report.csv");
      write_recall_csv(ranked.recall, out_dir + "/curves/perplexity_recall.csv");
      report.files.push_back("curves/perplexity_report.csv");
      report.files.push_back("curves/perplexity_recall.csv");
    }
    if (config.defense.embedding_distance) {
      const RankedFilterReport ranked = embedding_distance_rank(
          defense_victim, defense_train, bundle.trigger_test, bundle.trigger.desired_label);
      write_report_csv(ranked, out_dir + "/curves/embedding_distance_report.csv");
      write_recall_csv(ranked.recall, out_dir + "/curves/embedding_distance_recall.csv");
      report.files.push_back("curves/embedding_distance_report.csv");
      report.files.push_back("curves/embedding_distance_recall.csv");
    }
    if (config.defense.pca) {
      std::vector<Example> sample = defense_train;
      sample.insert(sample.end(), bundle.trigger_test.begin(), bundle.trigger_test.end());
      const std::vector<double> rows = representations_matrix(defense_victim, sample);
      const PcaResult pca = pca_project(rows, static_cast<int>(sample.size()),
                                        defense_victim.dims.head_width());
      write_pca_csv(sample, pca, out_dir + "/curves/pca.csv");
      report.files.push_back("curves/pca.csv");
    }
  }

  write_report_json(report, config.run_label, out_dir + "/report.json");
  return report;
}

}  // namespace poisonlab
