// Acceptance suite: runs every criterion end to end and prints one
// PASS/FAIL line per criterion. Exits nonzero if any criterion fails.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "eigen3_oracle.hpp"
#include "poisonlab/harness.hpp"
#include "test_util.hpp"

using namespace poisonlab;

namespace {

struct SweepArtifacts {
  RunReport report;
  std::string dir;
  int train_size = 0;
};

// Shared desk-scale run behind criteria 4-8: default corpus, 50 poisons,
// counts 0/5/50, three fresh victim seeds.
ExperimentConfig acceptance_config() {
  ExperimentConfig config;
  config.corpus.vocab_size = 300;
  config.corpus.train_size = 5000;
  config.corpus.validation_size = 1000;
  config.corpus.adv_size = 50;
  config.corpus.trigger_test_size = 100;
  config.corpus.trigger_length = 3;
  config.corpus.neutral_rate = 0.02;
  config.corpus.label_noise_rate = 0.05;
  config.corpus.seed = 1;
  config.model = {300, 16, 16, 1};
  config.train.learning_rate = 0.5;
  config.train.batch_size = 32;
  config.train.epochs = 8;
  config.train.init_scale = 0.5;
  config.attack.poison_count = 50;
  config.attack.candidate_pool = 50;
  config.attack.batches_per_estimate = 4;
  config.attack.batch_size = 32;
  config.attack.max_sweeps = 5;
  config.attack.unroll_lr = 0.5;
  config.attack.seed = 7;
  config.attack.ensemble = {{101, 4}, {101, 8}, {102, 4}, {102, 8}, {103, 4}, {103, 8}};
  config.victim_seeds = {201, 202, 205};
  config.run_label = "acceptance";
  return config;
}

const SweepArtifacts& shared_sweep() {
  static SweepArtifacts artifacts = [] {
    SweepArtifacts out;
    out.dir = std::filesystem::temp_directory_path() / "poisonlab_acceptance_run";
    std::filesystem::remove_all(out.dir);
    const ExperimentConfig config = acceptance_config();
    out.report = run_sweep(config, {0, 5, 50}, out.dir);
    out.train_size = config.corpus.train_size + 50;
    return out;
  }();
  return artifacts;
}

bool criterion_gradients(std::string& detail) {
  Rng rng(11);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const ModelDims dims{50, 8, 6, trial % 2};
    const ModelState state =
        init_params(dims, 0.15 + 0.05 * (trial % 6), 100 + static_cast<std::uint64_t>(trial));
    const auto batch = testutil::random_batch(rng, 1 + trial % 8, dims.vocab_size, 12);
    const GradientBundle grad = grad_params(state, batch);
    const auto fd = testutil::fd_grad_params(state, batch, 1e-5);
    std::size_t bad = 0;
    if (!testutil::allclose(pack_gradient(grad), fd, 1e-6, 1e-10, &bad)) {
      detail = "trial " + std::to_string(trial) + " coordinate " + std::to_string(bad);
      return false;
    }
    ++checked;
  }
  detail = std::to_string(checked) + " random configurations within rtol 1e-6";
  return true;
}

bool criterion_second_order(std::string& detail) {
  // Closed-form one-parameter instance: L_train = (theta - e)^2,
  // L_adv = theta'^2; at theta = 1, e = 0, eta = 0.1 the gradient is 0.32.
  class ScalarQuadratic final : public UnrollProblem {
   public:
    int theta_size() const override { return 1; }
    int input_size() const override { return 1; }
    std::vector<double> train_grad(const std::vector<double>& theta,
                                   const std::vector<double>& e) const override {
      return {2.0 * (theta[0] - e[0])};
    }
    double adv_loss(const std::vector<double>& theta) const override {
      return theta[0] * theta[0];
    }
    std::vector<double> adv_grad(const std::vector<double>& theta) const override {
      return {2.0 * theta[0]};
    }
    std::vector<double> mixed_grad(const std::vector<double>&, const std::vector<double>&,
                                   const std::vector<double>& v) const override {
      return {-2.0 * v[0]};
    }
  };
  const ScalarQuadratic scalar;
  const auto scalar_exact = unrolled_grad(scalar, {1.0}, {0.0}, 0.1);
  const auto scalar_fd = fd_grad(scalar, {1.0}, {0.0}, 0.1, 1e-5);
  if (std::fabs(scalar_exact[0] - 0.32) > 1e-6 || std::fabs(scalar_fd[0] - 0.32) > 1e-6) {
    detail = "scalar oracle returned " + std::to_string(scalar_exact[0]);
    return false;
  }

  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelDims dims{50, 8, 6, trial % 2};
    const ModelState state = init_params(dims, 0.25, 300 + static_cast<std::uint64_t>(trial));
    auto batch = testutil::random_batch(rng, 16, dims.vocab_size, 10);
    auto adv = testutil::random_batch(rng, 8, dims.vocab_size, 10);
    for (auto& ex : adv) ex.label = 1;
    const PoisonEmbedding poison = testutil::random_poison(rng, 6, dims.embed_dim, 0.3, 1);
    const double eta = 0.1 + 0.1 * (trial % 4);

    const auto zero = unrolled_poison_grad(state, poison, batch, adv, 0.0);
    for (double v : zero)
      if (std::fabs(v) > 1e-10) {
        detail = "eta=0 gradient not zero at trial " + std::to_string(trial);
        return false;
      }

    const auto exact = unrolled_poison_grad(state, poison, batch, adv, eta);
    const auto fd = fd_poison_grad(state, poison, batch, adv, eta, 1e-5);
    std::size_t bad = 0;
    if (!testutil::allclose(exact, fd, 1e-5, 1e-9, &bad)) {
      detail = "trial " + std::to_string(trial) + " coordinate " + std::to_string(bad);
      return false;
    }
  }
  detail = "scalar oracle 0.32, eta=0 zero, 20 FD agreements within rtol 1e-5";
  return true;
}

bool criterion_brute_force(std::string& detail) {
  Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    const int vocab = 8 + static_cast<int>(uniform_index(rng, 13));  // 8..20
    const int d = 2 + static_cast<int>(uniform_index(rng, 4));
    const ModelDims dims{vocab, d, 4, trial % 2};
    const ModelState member = init_params(dims, 0.4, 500 + static_cast<std::uint64_t>(trial));
    const std::vector<ModelState> ensemble{member};

    auto train_set = testutil::random_batch(rng, 30, vocab, 8);
    for (int i = 0; i < 30; ++i) train_set[static_cast<std::size_t>(i)].id = i;
    auto adv = testutil::random_batch(rng, 6, vocab, 8);
    for (auto& ex : adv) ex.label = 1;

    AttackConfig config;
    config.ensemble = {{1, 1}};
    config.batches_per_estimate = 1;
    config.batch_size = 8;
    config.unroll_lr = 0.3;
    config.seed = 1000 + static_cast<std::uint64_t>(trial);

    PoisonCandidate poison;
    poison.label = 1;
    for (int i = 0; i < 5; ++i)
      poison.tokens.push_back(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(vocab))));
    const int position = static_cast<int>(uniform_index(rng, 5));

    std::vector<int> all_ids(static_cast<std::size_t>(vocab));
    for (int i = 0; i < vocab; ++i) all_ids[static_cast<std::size_t>(i)] = i;
    const FlipResult result =
        rerank_and_flip(ensemble, poison, position, all_ids, train_set, adv, config);

    // Independent route: explicit update + adversarial loss per candidate.
    const auto batches =
        sample_batches(train_set, 1, 8, derive_seed(config.seed, 0xba7c4));
    int best_token = -1;
    double best_value = 0.0;
    for (int candidate : all_ids) {
      std::vector<int> tokens = poison.tokens;
      tokens[static_cast<std::size_t>(position)] = candidate;
      const PoisonEmbedding embed = PoisonEmbedding::from_tokens(member, tokens, 1);
      const GradientBundle bundle = poisoned_train_grad(member, batches[0], embed);
      const double value = loss_adv(sgd_step(member, bundle, 0.3), adv);
      if (best_token < 0 || value < best_value) {
        best_token = candidate;
        best_value = value;
      }
    }
    if (result.poison.tokens[static_cast<std::size_t>(position)] != best_token) {
      detail = "trial " + std::to_string(trial) + ": selected " +
               std::to_string(result.poison.tokens[static_cast<std::size_t>(position)]) +
               " but exhaustive argmin is " + std::to_string(best_token);
      return false;
    }
  }
  detail = "50/50 trials matched the exhaustive argmin";
  return true;
}

bool criterion_with_overlap(std::string& detail) {
  const SweepArtifacts& run = shared_sweep();
  const double success = mean_attack_success(run.report, "with-overlap", 50);
  const double baseline_clean = mean_clean_accuracy(run.report, "none", 0);
  const double poisoned_clean = mean_clean_accuracy(run.report, "with-overlap", 50);
  std::ostringstream out;
  out << "success " << success << " (need >= 0.90), clean " << poisoned_clean
      << " vs baseline " << baseline_clean;
  detail = out.str();
  return success >= 0.90 && baseline_clean - poisoned_clean <= 0.02;
}

bool criterion_no_overlap(std::string& detail) {
  const SweepArtifacts& run = shared_sweep();
  const double success = mean_attack_success(run.report, "no-overlap", 50);
  const double baseline = mean_attack_success(run.report, "none", 0);
  const double baseline_clean = mean_clean_accuracy(run.report, "none", 0);
  const double poisoned_clean = mean_clean_accuracy(run.report, "no-overlap", 50);

  // Zero-overlap hard check over the emitted pool.
  const DatasetBundle bundle = generate_corpus(acceptance_config().corpus);
  const auto pool =
      load_examples(run.dir + "/poisons/no_overlap.tsv", bundle.vocab.size());
  int overlaps = 0;
  for (const auto& poison : pool)
    for (int token : poison.tokens)
      for (int trigger_token : bundle.trigger.tokens)
        if (token == trigger_token) ++overlaps;

  std::ostringstream out;
  out << "success " << success << " vs baseline " << baseline
      << " (need +0.20), overlap tokens " << overlaps << ", clean " << poisoned_clean
      << " vs " << baseline_clean;
  detail = out.str();
  return success - baseline >= 0.20 && overlaps == 0 &&
         baseline_clean - poisoned_clean <= 0.02;
}

bool criterion_dose_response(std::string& detail) {
  const SweepArtifacts& run = shared_sweep();
  const double base = mean_attack_success(run.report, "none", 0);
  std::ostringstream out;
  out << "baseline " << base;
  bool ok = true;
  for (const std::string type : {"with-overlap", "no-overlap"}) {
    const double at5 = mean_attack_success(run.report, type, 5);
    const double at50 = mean_attack_success(run.report, type, 50);
    out << "; " << type << " 5: " << at5 << ", 50: " << at50;
    ok = ok && base <= at5 && at5 <= at50;
  }
  detail = out.str();
  return ok;
}

bool criterion_early_stopping(std::string& detail) {
  const SweepArtifacts& run = shared_sweep();
  const std::string path = run.dir + "/curves/early_stopping.csv";
  std::ifstream in(path);
  if (!in) {
    detail = "missing " + path;
    return false;
  }
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> successes;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string epoch, val, loss, attack;
    std::getline(fields, epoch, ',');
    std::getline(fields, val, ',');
    std::getline(fields, loss, ',');
    std::getline(fields, attack, ',');
    successes.push_back(std::stod(attack));
  }
  if (successes.size() < 2) {
    detail = "curve too short";
    return false;
  }
  std::ostringstream out;
  out << "epoch 1: " << successes.front() << ", final: " << successes.back();
  detail = out.str();
  return successes.back() >= successes.front();
}

bool read_recall_csv(const std::string& path, std::vector<int>& recall) {
  std::ifstream in(path);
  if (!in) return false;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    recall.push_back(std::stoi(line.substr(comma + 1)));
  }
  return !recall.empty();
}

bool criterion_filter_defenses(std::string& detail) {
  const SweepArtifacts& run = shared_sweep();
  const int n = run.train_size;
  const int p = 50;
  const int k = n / 10;
  const double random_baseline = static_cast<double>(k) * p / n;

  std::ostringstream out;
  bool ok = true;
  for (const std::string name : {"perplexity", "embedding_distance"}) {
    std::vector<int> recall;
    if (!read_recall_csv(run.dir + "/curves/" + name + "_recall.csv", recall)) {
      detail = "missing recall curve for " + name;
      return false;
    }
    if (static_cast<int>(recall.size()) != n) {
      detail = name + " recall length " + std::to_string(recall.size());
      return false;
    }
    bool monotone = true;
    for (std::size_t i = 1; i < recall.size(); ++i)
      if (recall[i] < recall[i - 1]) monotone = false;
    const int at_k = recall[static_cast<std::size_t>(k - 1)];
    out << name << " recall@" << k << " = " << at_k << " (chance " << random_baseline
        << "); ";
    ok = ok && monotone && recall.back() == p &&
         static_cast<double>(at_k) >= 2.0 * random_baseline;
  }
  detail = out.str();
  return ok;
}

bool criterion_pca(std::string& detail) {
  Rng rng(44);
  int tested = 0;
  while (tested < 10) {
    const int m = 5 + static_cast<int>(uniform_index(rng, 30));
    std::vector<double> rows(static_cast<std::size_t>(m) * 3);
    for (auto& v : rows) v = uniform_symmetric(rng, 2.0);

    std::array<double, 3> mean{};
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < 3; ++j)
        mean[static_cast<std::size_t>(j)] += rows[static_cast<std::size_t>(i) * 3 + j] / m;
    std::array<std::array<double, 3>, 3> cov{};
    for (int i = 0; i < m; ++i)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          cov[a][b] += (rows[static_cast<std::size_t>(i) * 3 + a] - mean[static_cast<std::size_t>(a)]) *
                       (rows[static_cast<std::size_t>(i) * 3 + b] - mean[static_cast<std::size_t>(b)]) / (m - 1);
    const testutil::Eigen3 eig = testutil::eigen3(cov);
    // Near-equal eigenvalues make the principal basis ill-defined; power
    // iteration is only compared where the oracle's basis is stable.
    if (eig.values[1] > 0.9 * eig.values[0] || eig.values[2] > 0.9 * eig.values[1]) continue;
    ++tested;

    const PcaResult pca = pca_project(rows, m, 3);
    if (pca.explained_variance[0] + 1e-12 < pca.explained_variance[1]) {
      detail = "explained variances out of order";
      return false;
    }
    for (int component = 0; component < 2; ++component) {
      if (std::fabs(pca.explained_variance[static_cast<std::size_t>(component)] -
                    eig.values[static_cast<std::size_t>(component)]) >
          1e-6 * std::max(1.0, eig.values[static_cast<std::size_t>(component)])) {
        detail = "variance mismatch on component " + std::to_string(component);
        return false;
      }
      double dot = 0.0;
      for (int j = 0; j < 3; ++j)
        dot += eig.vectors[static_cast<std::size_t>(component)][static_cast<std::size_t>(j)] *
               pca.components[static_cast<std::size_t>(component) * 3 + j];
      const double sign = dot >= 0.0 ? 1.0 : -1.0;
      for (int i = 0; i < m; ++i) {
        double oracle_coord = 0.0;
        for (int j = 0; j < 3; ++j)
          oracle_coord += (rows[static_cast<std::size_t>(i) * 3 + j] - mean[static_cast<std::size_t>(j)]) *
                          eig.vectors[static_cast<std::size_t>(component)][static_cast<std::size_t>(j)];
        if (std::fabs(sign * oracle_coord -
                      pca.coords[static_cast<std::size_t>(i) * 2 + component]) > 1e-6) {
          detail = "projection mismatch at row " + std::to_string(i);
          return false;
        }
      }
    }
  }
  detail = "10 random matrices matched the closed-form oracle within 1e-6";
  return true;
}

bool criterion_determinism(std::string& detail) {
  ExperimentConfig config;
  config.corpus.vocab_size = 60;
  config.corpus.subject_count = 10;
  config.corpus.positive_count = 8;
  config.corpus.negative_count = 8;
  config.corpus.filler_count = 25;
  config.corpus.train_size = 400;
  config.corpus.validation_size = 120;
  config.corpus.adv_size = 10;
  config.corpus.trigger_test_size = 20;
  config.corpus.seed = 77;
  config.model = {60, 8, 8, 1};
  config.train.epochs = 3;
  config.train.init_scale = 0.5;
  config.attack.poison_count = 3;
  config.attack.candidate_pool = 10;
  config.attack.batches_per_estimate = 2;
  config.attack.batch_size = 16;
  config.attack.max_sweeps = 2;
  config.attack.unroll_lr = 0.5;
  config.attack.ensemble = {{11, 2}, {12, 3}};
  config.victim_seeds = {201};
  config.run_label = "determinism";

  const std::string dir_a = std::filesystem::temp_directory_path() / "poisonlab_det_a";
  const std::string dir_b = std::filesystem::temp_directory_path() / "poisonlab_det_b";
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  run_sweep(config, {0, 3}, dir_a);
  run_sweep(config, {0, 3}, dir_b);

  auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
  };
  const std::string a = slurp(dir_a + "/metrics.jsonl");
  const std::string b = slurp(dir_b + "/metrics.jsonl");
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  if (a.empty() || a != b) {
    detail = "metrics.jsonl differs between identical runs";
    return false;
  }
  detail = "two sweep executions produced identical metrics.jsonl (" +
           std::to_string(a.size()) + " bytes)";
  return true;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<bool(std::string&)> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient correctness vs finite differences", criterion_gradients},
      {2, "second-order unrolled gradient correctness", criterion_second_order},
      {3, "brute-force search equivalence", criterion_brute_force},
      {4, "with-overlap attack efficacy", criterion_with_overlap},
      {5, "no-overlap attack efficacy", criterion_no_overlap},
      {6, "monotone dose response", criterion_dose_response},
      {7, "early stopping trend", criterion_early_stopping},
      {8, "filtering defenses beat chance", criterion_filter_defenses},
      {9, "pca oracle agreement", criterion_pca},
      {10, "end-to-end determinism", criterion_determinism},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    std::string detail;
    bool ok = false;
    try {
      ok = criterion.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
      ok = false;
    }
    std::printf("[criterion %2d] %s: %s — %s\n", criterion.id, ok ? "PASS" : "FAIL",
                criterion.name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
