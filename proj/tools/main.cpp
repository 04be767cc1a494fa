// Command-line front end: corpus generation, training, poison crafting,
// sweep orchestration, defenses, and report summaries.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "json.hpp"

#include "poisonlab/harness.hpp"

namespace {

using namespace poisonlab;

std::vector<int> parse_counts(const std::string& text) {
  std::vector<int> counts;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      counts.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("bad poison count: " + item);
    }
  }
  if (counts.empty()) throw ConfigError("no poison counts given");
  return counts;
}

int count_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  int lines = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  return lines;
}

int cmd_gen_corpus(const std::string& config_path, const std::string& out_dir) {
  const ExperimentConfig config = parse_experiment_config(config_path);
  const DatasetBundle bundle = generate_corpus(config.corpus);
  save_dataset(bundle, out_dir);
  std::cout << "corpus written to " << out_dir << " (train " << bundle.train.size()
            << ", validation " << bundle.validation.size() << ", adv "
            << bundle.adv_set.size() << ", trigger-test " << bundle.trigger_test.size()
            << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& corpus_dir,
              std::uint64_t seed, bool seed_given, const std::string& out_path,
              const std::string& trace_path) {
  const ExperimentConfig config = parse_experiment_config(config_path);
  const DatasetBundle bundle = load_dataset(corpus_dir);
  const std::uint64_t victim_seed = seed_given ? seed : config.victim_seeds.front();
  auto [state, trace] = train_from_seed(config.model, victim_seed, bundle.train,
                                        bundle.validation, config.train);
  save_checkpoint(state, out_path);
  if (!trace_path.empty()) write_trace_csv(trace, trace_path);
  std::cout << "trained seed " << victim_seed << ": validation accuracy "
            << trace.records.back().validation_accuracy << ", checkpoint " << out_path
            << "\n";
  return 0;
}

int cmd_craft(const std::string& config_path, const std::string& corpus_dir,
              const std::string& type, int count, const std::string& out_dir) {
  const ExperimentConfig config = parse_experiment_config(config_path);
  const DatasetBundle bundle = load_dataset(corpus_dir);
  const int n = count > 0 ? count : config.attack.poison_count;
  std::filesystem::create_directories(out_dir);

  if (type == "with-overlap") {
    const auto poisons = craft_with_overlap(bundle.adv_set, n);
    save_examples(poisons_to_examples(poisons, 0), out_dir + "/with_overlap.tsv");
    std::cout << "wrote " << n << " with-overlap poisons to " << out_dir << "\n";
    return 0;
  }
  if (type != "no-overlap") throw ConfigError("unknown poison type: " + type);

  AttackConfig attack = config.attack;
  attack.poison_count = n;
  attack.forbidden_tokens = bundle.trigger.tokens;
  const auto ensemble =
      build_ensemble(bundle.train, config.model, attack.ensemble, config.train);
  const auto poisons =
      craft_no_overlap(ensemble, bundle.adv_set, bundle.trigger, bundle.train, attack);
  save_examples(poisons_to_examples(poisons, 0), out_dir + "/no_overlap.tsv");
  save_flip_log(poisons, out_dir + "/no_overlap_flips.tsv");
  std::cout << "wrote " << n << " no-overlap poisons to " << out_dir << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& counts_text,
              const std::string& out_dir) {
  const ExperimentConfig config = parse_experiment_config(config_path);
  const std::vector<int> counts = parse_counts(counts_text);
  const RunReport report = run_sweep(config, counts, out_dir);
  std::cout << "sweep complete: " << report.metrics.size() << " victim evaluations, "
            << report.guard_band_flags.size() << " guard-band flags, outputs in "
            << out_dir << "\n";
  return 0;
}

int cmd_defend(const std::string& config_path, const std::string& run_dir,
               const std::string& method, const std::string& type, int count_flag) {
  const ExperimentConfig config = parse_experiment_config(config_path);
  const DatasetBundle bundle = load_dataset(run_dir + "/corpus");
  std::filesystem::create_directories(run_dir + "/curves");

  const std::string pool_path =
      run_dir + "/poisons/" + (type == "with-overlap" ? "with_overlap.tsv" : "no_overlap.tsv");
  const int count = count_flag > 0 ? count_flag : count_lines(pool_path);
  std::vector<Example> pool = load_examples(pool_path, bundle.vocab.size());
  if (count > static_cast<int>(pool.size()))
    throw ConfigError("requested count exceeds the crafted pool size");
  pool.resize(static_cast<std::size_t>(count));
  // Reconstruct the same poisoned training set the sweep used.
  const std::vector<Example> poisoned = insert_poisons(
      bundle.train, pool, poison_insertion_seed(config.corpus.seed, type, count));

  if (method == "perplexity") {
    CorpusConfig reference_config = config.corpus;
    reference_config.seed = derive_seed(config.corpus.seed, 0x4ef);
    const DatasetBundle reference = generate_corpus(reference_config);
    const RankedFilterReport report = perplexity_rank(
        poisoned, reference.train, config.defense.ngram_order, config.defense.smoothing_k);
    write_report_csv(report, run_dir + "/curves/perplexity_report.csv");
    write_recall_csv(report.recall, run_dir + "/curves/perplexity_recall.csv");
    std::cout << "perplexity defense: " << report.poison_total << " poisons, report in "
              << run_dir << "/curves\n";
    return 0;
  }
  if (method == "embedding-distance" || method == "pca") {
    // Pick the sweep victim that shows the attack most strongly, matching
    // the harness's choice of defense model.
    ModelState victim;
    double best = -1.0;
    for (auto seed : config.victim_seeds) {
      const std::string ckpt = run_dir + "/victims/" + type + "_" + std::to_string(count) +
                               "_" + std::to_string(seed) + ".ckpt";
      ModelState candidate = load_checkpoint(ckpt);
      const double success =
          evaluate_attack(candidate, bundle.trigger_test, bundle.trigger.desired_label);
      if (success > best) {
        best = success;
        victim = std::move(candidate);
      }
    }
    if (method == "embedding-distance") {
      const RankedFilterReport report = embedding_distance_rank(
          victim, poisoned, bundle.trigger_test, bundle.trigger.desired_label);
      write_report_csv(report, run_dir + "/curves/embedding_distance_report.csv");
      write_recall_csv(report.recall, run_dir + "/curves/embedding_distance_recall.csv");
      std::cout << "embedding-distance defense"
                << (report.used_fallback ? " (fallback: no misclassified tests)" : "")
                << ": report in " << run_dir << "/curves\n";
      return 0;
    }
    std::vector<Example> sample = poisoned;
    sample.insert(sample.end(), bundle.trigger_test.begin(), bundle.trigger_test.end());
    const std::vector<double> rows = representations_matrix(victim, sample);
    const PcaResult pca =
        pca_project(rows, static_cast<int>(sample.size()), victim.dims.head_width());
    write_pca_csv(sample, pca, run_dir + "/curves/pca.csv");
    std::cout << "pca export written to " << run_dir << "/curves/pca.csv\n";
    return 0;
  }
  if (method == "early-stopping") {
    const TrainTrace trace = early_stopping_study(
        poisoned, bundle.validation, bundle.trigger_test, config.model,
        config.victim_seeds.front(), config.train, bundle.trigger.desired_label);
    write_trace_csv(trace, run_dir + "/curves/early_stopping.csv");
    std::cout << "early-stopping curve written to " << run_dir
              << "/curves/early_stopping.csv\n";
    return 0;
  }
  throw ConfigError("unknown defense method: " + method);
}

int cmd_report(const std::string& run_dir) {
  std::ifstream in(run_dir + "/metrics.jsonl");
  if (!in) throw ConfigError("cannot open " + run_dir + "/metrics.jsonl");
  std::map<std::pair<std::string, int>, std::pair<double, int>> attack, clean;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto record = nlohmann::json::parse(line);
    const std::pair<std::string, int> key{record.at("poison_type"),
                                          record.at("poison_count")};
    attack[key].first += record.at("attack_success").get<double>();
    attack[key].second += 1;
    clean[key].first += record.at("clean_accuracy").get<double>();
    clean[key].second += 1;
  }
  std::cout << "poison_type,poison_count,mean_attack_success,mean_clean_accuracy,victims\n";
  for (const auto& [key, sum] : attack) {
    const auto& c = clean.at(key);
    std::cout << key.first << ',' << key.second << ',' << sum.first / sum.second << ','
              << c.first / c.second << ',' << sum.second << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"poisonlab: concealed data-poisoning laboratory for text classifiers"};
  app.require_subcommand(1);

  std::string config_path, out_path, corpus_dir, run_dir, counts_text = "0,5,50";
  std::string type = "no-overlap", method = "perplexity", trace_path;
  std::uint64_t seed = 0;
  int count = 0;

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  gen->add_option("--config", config_path, "experiment config file")->required();
  gen->add_option("--out", out_path, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train one model on a saved corpus");
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--corpus", corpus_dir)->required();
  auto* seed_opt = train_cmd->add_option("--seed", seed, "victim seed");
  train_cmd->add_option("--out", out_path, "checkpoint path")->required();
  train_cmd->add_option("--trace", trace_path, "per-epoch CSV trace");

  auto* craft_cmd = app.add_subcommand("craft", "craft a poison pool");
  craft_cmd->add_option("--config", config_path)->required();
  craft_cmd->add_option("--corpus", corpus_dir)->required();
  craft_cmd->add_option("--type", type, "with-overlap | no-overlap");
  craft_cmd->add_option("--count", count, "pool size (default attack.poison_count)");
  craft_cmd->add_option("--out", out_path)->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "full poison-count sweep");
  sweep_cmd->add_option("--config", config_path)->required();
  sweep_cmd->add_option("--counts", counts_text, "comma-separated poison counts");
  sweep_cmd->add_option("--out", out_path)->required();

  auto* defend_cmd = app.add_subcommand("defend", "run a defense on a sweep output");
  defend_cmd->add_option("--config", config_path)->required();
  defend_cmd->add_option("--run", run_dir)->required();
  defend_cmd->add_option("--method", method,
                         "perplexity | embedding-distance | early-stopping | pca")
      ->required();
  defend_cmd->add_option("--type", type, "poison pool to analyze");
  defend_cmd->add_option("--count", count, "poison count level (default: whole pool)");

  auto* report_cmd = app.add_subcommand("report", "summarize a run's metrics");
  report_cmd->add_option("--run", run_dir)->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_corpus(config_path, out_path);
    if (train_cmd->parsed())
      return cmd_train(config_path, corpus_dir, seed, seed_opt->count() > 0, out_path,
                       trace_path);
    if (craft_cmd->parsed()) return cmd_craft(config_path, corpus_dir, type, count, out_path);
    if (sweep_cmd->parsed()) return cmd_sweep(config_path, counts_text, out_path);
    if (defend_cmd->parsed()) return cmd_defend(config_path, run_dir, method, type, count);
    if (report_cmd->parsed()) return cmd_report(run_dir);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const poisonlab::ParseError& e) {
    std::cerr << "ERROR 2 parse: " << e.what() << "\n";
    return 2;
  } catch (const poisonlab::ConfigError& e) {
    std::cerr << "ERROR 2 config: " << e.what() << "\n";
    return 2;
  } catch (const poisonlab::CraftingError& e) {
    std::cerr << "ERROR 3 crafting: " << e.what() << "\n";
    return 3;
  } catch (const poisonlab::NumericError& e) {
    std::cerr << "ERROR 4 numeric: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "ERROR 1 internal: " << e.what() << "\n";
    return 1;
  }
}
