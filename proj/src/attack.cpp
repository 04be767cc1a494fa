#include "poisonlab/attack.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <thread>
#include <unordered_set>

namespace poisonlab {

namespace {

// Batch sampling stream shared by gradient estimation and re-ranking, so
// both sides of a step see the same batches for a given seed.
constexpr std::uint64_t kBatchStream = 0xba7c4;

}  // namespace

void validate(const AttackConfig& config) {
  if (config.poison_count < 1) throw ConfigError("attack config: poison_count must be >= 1");
  if (config.candidate_pool < 1) throw ConfigError("attack config: candidate_pool must be >= 1");
  if (config.batches_per_estimate < 1)
    throw ConfigError("attack config: batches_per_estimate must be >= 1");
  if (config.batch_size < 1) throw ConfigError("attack config: batch_size must be >= 1");
  if (config.ensemble.empty()) throw ConfigError("attack config: ensemble must be nonempty");
  if (config.max_sweeps < 1) throw ConfigError("attack config: max_sweeps must be >= 1");
  if (config.unroll_lr <= 0.0) throw ConfigError("attack config: unroll_lr must be > 0");
}

std::vector<ModelState> build_ensemble(const std::vector<Example>& clean_train,
                                       const ModelDims& dims,
                                       const std::vector<EnsembleEntry>& entries,
                                       const TrainConfig& train_config) {
  if (entries.empty()) throw ConfigError("build_ensemble: empty ensemble list");
  for (const auto& entry : entries)
    if (entry.epoch < 1 || entry.epoch > train_config.epochs)
      throw ConfigError("build_ensemble: checkpoint epoch " + std::to_string(entry.epoch) +
                        " beyond training length " + std::to_string(train_config.epochs));

  std::map<std::uint64_t, std::vector<int>> epochs_by_seed;
  for (const auto& entry : entries) epochs_by_seed[entry.seed].push_back(entry.epoch);

  std::map<std::uint64_t, std::map<int, ModelState>> checkpoints;
  for (auto& [seed, epochs] : epochs_by_seed) {
    TrainConfig cfg = train_config;
    cfg.epochs = *std::max_element(epochs.begin(), epochs.end());
    cfg.checkpoint_epochs = epochs;
    std::sort(cfg.checkpoint_epochs.begin(), cfg.checkpoint_epochs.end());
    cfg.checkpoint_epochs.erase(
        std::unique(cfg.checkpoint_epochs.begin(), cfg.checkpoint_epochs.end()),
        cfg.checkpoint_epochs.end());
    auto [state, trace] = train_from_seed(dims, seed, clean_train, {}, cfg);
    checkpoints[seed] = std::move(trace.checkpoints);
  }

  std::vector<ModelState> ensemble;
  ensemble.reserve(entries.size());
  for (const auto& entry : entries)
    ensemble.push_back(checkpoints.at(entry.seed).at(entry.epoch));
  return ensemble;
}

std::vector<std::vector<Example>> sample_batches(const std::vector<Example>& train,
                                                 int count, int batch_size,
                                                 std::uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("sample_batches: empty training set");
  if (count < 1 || batch_size < 1)
    throw std::invalid_argument("sample_batches: count and batch_size must be >= 1");
  Rng rng(seed);
  const std::size_t take = std::min(static_cast<std::size_t>(batch_size), train.size());
  std::vector<std::vector<Example>> batches;
  batches.reserve(static_cast<std::size_t>(count));
  std::unordered_set<std::size_t> used;
  for (int b = 0; b < count; ++b) {
    used.clear();
    std::vector<Example> batch;
    batch.reserve(take);
    while (batch.size() < take) {
      const std::size_t i = uniform_index(rng, train.size());
      if (used.insert(i).second) batch.push_back(train[i]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<double> mean_embedding_table(const std::vector<ModelState>& ensemble) {
  if (ensemble.empty()) throw std::invalid_argument("mean_embedding_table: empty ensemble");
  std::vector<double> table(ensemble.front().embedding.size(), 0.0);
  for (const auto& member : ensemble) {
    if (member.embedding.size() != table.size())
      throw std::invalid_argument("mean_embedding_table: mismatched member shapes");
    for (std::size_t i = 0; i < table.size(); ++i) table[i] += member.embedding[i];
  }
  const double inv = 1.0 / static_cast<double>(ensemble.size());
  for (auto& v : table) v *= inv;
  return table;
}

std::vector<double> poison_grad_with_batches(
    const std::vector<ModelState>& ensemble, const PoisonCandidate& poison,
    const std::vector<std::vector<Example>>& batches,
    const std::vector<Example>& adv_set, double eta) {
  if (ensemble.empty() || batches.empty())
    throw std::invalid_argument("poison_grad_with_batches: empty ensemble or batches");
  std::vector<double> mean;
  for (const auto& member : ensemble) {
    const PoisonEmbedding embed =
        PoisonEmbedding::from_tokens(member, poison.tokens, poison.label);
    for (const auto& batch : batches) {
      std::vector<double> g = unrolled_poison_grad(member, embed, batch, adv_set, eta);
      if (mean.empty()) mean.assign(g.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) mean[i] += g[i];
    }
  }
  const double inv = 1.0 / (static_cast<double>(ensemble.size()) * batches.size());
  for (auto& v : mean) v *= inv;
  return mean;
}

std::vector<double> poison_grad_estimate(const std::vector<ModelState>& ensemble,
                                         const PoisonCandidate& poison,
                                         const std::vector<Example>& clean_train,
                                         const std::vector<Example>& adv_set,
                                         const AttackConfig& config) {
  validate(config);
  const auto batches = sample_batches(clean_train, config.batches_per_estimate,
                                      config.batch_size, derive_seed(config.seed, kBatchStream));
  return poison_grad_with_batches(ensemble, poison, batches, adv_set, config.unroll_lr);
}

std::vector<int> score_replacements(const std::vector<double>& grad_row,
                                    const std::vector<double>& embedding_table,
                                    int vocab_size) {
  const std::size_t d = grad_row.size();
  if (d == 0) throw std::invalid_argument("score_replacements: empty gradient row");
  if (embedding_table.size() != static_cast<std::size_t>(vocab_size) * d)
    throw std::invalid_argument("score_replacements: table shape mismatch");
  std::vector<std::pair<double, int>> scored(static_cast<std::size_t>(vocab_size));
  for (int v = 0; v < vocab_size; ++v) {
    const double* row = embedding_table.data() + static_cast<std::size_t>(v) * d;
    double score = 0.0;
    for (std::size_t j = 0; j < d; ++j) score += row[j] * grad_row[j];
    scored[static_cast<std::size_t>(v)] = {score, v};
  }
  std::sort(scored.begin(), scored.end());  // ascending score, then smaller id
  std::vector<int> ids(scored.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = scored[i].second;
  return ids;
}

namespace {

// Per (ensemble member, batch) state for evaluating the crafting objective:
// the one-step update from the batch's clean gradient is cached, so each
// candidate only contributes its own head gradient.
class ObjectiveEvaluator {
 public:
  ObjectiveEvaluator(const std::vector<ModelState>& ensemble,
                     const std::vector<std::vector<Example>>& batches,
                     const std::vector<Example>& adv_set, double eta)
      : adv_(adv_set), eta_(eta) {
    pairs_.reserve(ensemble.size() * batches.size());
    for (const auto& member : ensemble) {
      for (const auto& batch : batches) {
        Pair pair;
        pair.member = &member;
        pair.batch = &batch;
        const double b = static_cast<double>(batch.size());
        pair.poison_weight = 1.0 / (b + 1.0);
        GradientBundle clean_mean = grad_params(member, batch);
        pair.theta_base = member;
        apply_gradient(pair.theta_base, clean_mean, eta, b / (b + 1.0));
        pair.scratch = pair.theta_base;
        pairs_.push_back(std::move(pair));
      }
    }
  }

  // Mean over pairs of L_adv after the one-step update that includes the
  // poison with the given tokens.
  double objective(const std::vector<int>& tokens, int label) {
    double total = 0.0;
    for (auto& pair : pairs_) {
      const PoisonEmbedding embed = PoisonEmbedding::from_tokens(*pair.member, tokens, label);
      const PoisonHeadGrads grads = poison_loss_grads(*pair.member, embed);
      auto head = [&](std::vector<double>& into, const std::vector<double>& base,
                      const std::vector<double>& g) {
        const double factor = -eta_ * pair.poison_weight;
        for (std::size_t i = 0; i < into.size(); ++i) into[i] = base[i] + factor * g[i];
      };
      head(pair.scratch.hidden_w, pair.theta_base.hidden_w, grads.hidden_w);
      head(pair.scratch.hidden_b, pair.theta_base.hidden_b, grads.hidden_b);
      head(pair.scratch.out_w, pair.theta_base.out_w, grads.out_w);
      head(pair.scratch.out_b, pair.theta_base.out_b, grads.out_b);
      total += loss_adv(pair.scratch, adv_);
    }
    return total / static_cast<double>(pairs_.size());
  }

  // Mean unrolled gradient over the same pairs.
  std::vector<double> gradient(const std::vector<int>& tokens, int label) const {
    std::vector<double> mean;
    for (const auto& pair : pairs_) {
      const PoisonEmbedding embed = PoisonEmbedding::from_tokens(*pair.member, tokens, label);
      std::vector<double> g =
          unrolled_poison_grad(*pair.member, embed, *pair.batch, adv_, eta_);
      if (mean.empty()) mean.assign(g.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) mean[i] += g[i];
    }
    const double inv = 1.0 / static_cast<double>(pairs_.size());
    for (auto& v : mean) v *= inv;
    return mean;
  }

 private:
  struct Pair {
    const ModelState* member = nullptr;
    const std::vector<Example>* batch = nullptr;
    ModelState theta_base;
    ModelState scratch;
    double poison_weight = 0.0;
  };
  std::vector<Pair> pairs_;
  const std::vector<Example>& adv_;
  double eta_;
};

struct CandidateChoice {
  int token = -1;
  double value = 0.0;
};

CandidateChoice best_candidate(ObjectiveEvaluator& evaluator, std::vector<int> tokens,
                               int label, int position,
                               const std::vector<int>& candidate_ids) {
  CandidateChoice best;
  for (int candidate : candidate_ids) {
    tokens[static_cast<std::size_t>(position)] = candidate;
    const double value = evaluator.objective(tokens, label);
    if (best.token < 0 || value < best.value ||
        (value == best.value && candidate < best.token)) {
      best.token = candidate;
      best.value = value;
    }
  }
  return best;
}

std::vector<int> filtered_pool(const std::vector<int>& ranking,
                               const std::unordered_set<int>& forbidden, int pool) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(pool));
  for (int id : ranking) {
    if (forbidden.count(id)) continue;
    out.push_back(id);
    if (static_cast<int>(out.size()) == pool) break;
  }
  return out;
}

}  // namespace

FlipResult rerank_and_flip(const std::vector<ModelState>& ensemble,
                           const PoisonCandidate& poison, int position,
                           const std::vector<int>& candidate_ids,
                           const std::vector<Example>& clean_train,
                           const std::vector<Example>& adv_set,
                           const AttackConfig& config) {
  validate(config);
  if (candidate_ids.empty())
    throw std::invalid_argument("rerank_and_flip: empty candidate list");
  if (position < 0 || position >= static_cast<int>(poison.tokens.size()))
    throw std::invalid_argument("rerank_and_flip: position out of range");
  const auto batches = sample_batches(clean_train, config.batches_per_estimate,
                                      config.batch_size, derive_seed(config.seed, kBatchStream));
  ObjectiveEvaluator evaluator(ensemble, batches, adv_set, config.unroll_lr);

  FlipResult result;
  result.poison = poison;
  result.objective_before = evaluator.objective(poison.tokens, poison.label);
  const CandidateChoice best =
      best_candidate(evaluator, poison.tokens, poison.label, position, candidate_ids);
  if (best.value < result.objective_before) {
    const int old_token = poison.tokens[static_cast<std::size_t>(position)];
    result.poison.tokens[static_cast<std::size_t>(position)] = best.token;
    result.accepted = true;
    result.objective_after = best.value;
    result.poison.history.push_back(
        {0, position, old_token, best.token, result.objective_before, best.value});
  } else {
    result.accepted = false;
    result.objective_after = result.objective_before;
  }
  return result;
}

namespace {

PoisonCandidate craft_one(const std::vector<ModelState>& ensemble,
                          const Example& init_example,
                          const std::unordered_set<int>& forbidden,
                          const std::vector<double>& scoring_table, int vocab_size,
                          const std::vector<Example>& clean_train,
                          const std::vector<Example>& adv_set,
                          const AttackConfig& config, int poison_index) {
  PoisonCandidate poison;
  poison.tokens = init_example.tokens;
  poison.label = init_example.label;
  poison.provenance_id = init_example.id;

  const int n = static_cast<int>(poison.tokens.size());
  const std::uint64_t poison_seed = derive_seed(config.seed, 0xc0de + poison_index);

  for (int sweep = 1; sweep <= config.max_sweeps; ++sweep) {
    const auto batches =
        sample_batches(clean_train, config.batches_per_estimate, config.batch_size,
                       derive_seed(poison_seed, static_cast<std::uint64_t>(sweep)));
    ObjectiveEvaluator evaluator(ensemble, batches, adv_set, config.unroll_lr);

    // Trigger-held positions first, then left to right over the rest.
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(n));
    for (int p = 0; p < n; ++p)
      if (forbidden.count(poison.tokens[static_cast<std::size_t>(p)])) order.push_back(p);
    for (int p = 0; p < n; ++p)
      if (!forbidden.count(poison.tokens[static_cast<std::size_t>(p)])) order.push_back(p);

    double current_value = evaluator.objective(poison.tokens, poison.label);
    std::vector<double> grad = evaluator.gradient(poison.tokens, poison.label);
    bool grad_fresh = true;
    int flips = 0;

    for (int position : order) {
      if (!grad_fresh) {
        grad = evaluator.gradient(poison.tokens, poison.label);
        grad_fresh = true;
      }
      const std::size_t d = static_cast<std::size_t>(ensemble.front().dims.embed_dim);
      std::vector<double> row(grad.begin() + static_cast<std::size_t>(position) * d,
                              grad.begin() + (static_cast<std::size_t>(position) + 1) * d);
      const std::vector<int> ranking = score_replacements(row, scoring_table, vocab_size);
      const std::vector<int> pool = config.no_overlap
                                        ? filtered_pool(ranking, forbidden, config.candidate_pool)
                                        : filtered_pool(ranking, {}, config.candidate_pool);
      if (pool.empty())
        throw CraftingError("craft: no admissible candidates for poison " +
                            std::to_string(poison.provenance_id));

      const bool must_flip =
          forbidden.count(poison.tokens[static_cast<std::size_t>(position)]) > 0;
      const CandidateChoice best =
          best_candidate(evaluator, poison.tokens, poison.label, position, pool);
      const bool improves = best.value < current_value;
      if ((improves || must_flip) &&
          best.token != poison.tokens[static_cast<std::size_t>(position)]) {
        poison.history.push_back({sweep, position,
                                  poison.tokens[static_cast<std::size_t>(position)], best.token,
                                  current_value, best.value});
        poison.tokens[static_cast<std::size_t>(position)] = best.token;
        current_value = best.value;
        grad_fresh = false;
        ++flips;
      }
    }

    bool any_forbidden = false;
    for (int token : poison.tokens)
      if (forbidden.count(token)) any_forbidden = true;
    if (!any_forbidden && flips == 0) break;
    if (any_forbidden && sweep == config.max_sweeps)
      throw CraftingError("craft: poison initialized from adv example " +
                          std::to_string(poison.provenance_id) +
                          " still contains trigger tokens after " +
                          std::to_string(config.max_sweeps) + " sweeps");
  }
  return poison;
}

}  // namespace

std::vector<PoisonCandidate> craft_no_overlap(const std::vector<ModelState>& ensemble,
                                              const std::vector<Example>& adv_set,
                                              const TriggerPhrase& trigger,
                                              const std::vector<Example>& clean_train,
                                              const AttackConfig& config) {
  validate(config);
  if (ensemble.empty()) throw ConfigError("craft_no_overlap: empty ensemble");
  if (trigger.tokens.empty()) throw std::invalid_argument("craft_no_overlap: empty trigger");
  if (config.poison_count > static_cast<int>(adv_set.size()))
    throw ConfigError("craft_no_overlap: poison_count " + std::to_string(config.poison_count) +
                      " exceeds adv set size " + std::to_string(adv_set.size()) +
                      "; each poison needs a distinct adv example");

  std::unordered_set<int> forbidden(trigger.tokens.begin(), trigger.tokens.end());
  for (int token : config.forbidden_tokens) forbidden.insert(token);

  // Each poison starts from a distinct adv example, chosen by seeded draw.
  std::vector<std::size_t> adv_order(adv_set.size());
  for (std::size_t i = 0; i < adv_order.size(); ++i) adv_order[i] = i;
  Rng rng(derive_seed(config.seed, 0xad5));
  shuffle_in_place(adv_order, rng);

  const int vocab_size = ensemble.front().dims.vocab_size;
  const std::vector<double> scoring_table = mean_embedding_table(ensemble);

  std::vector<PoisonCandidate> poisons(static_cast<std::size_t>(config.poison_count));
  std::vector<std::exception_ptr> errors(poisons.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= poisons.size()) return;
      try {
        poisons[i] = craft_one(ensemble, adv_set[adv_order[i]], forbidden, scoring_table,
                               vocab_size, clean_train, adv_set, config, static_cast<int>(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t thread_count = std::min<std::size_t>(hw, poisons.size());
  if (thread_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(thread_count);
    for (std::size_t t = 0; t < thread_count; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (const auto& error : errors)
    if (error) std::rethrow_exception(error);

  for (const auto& poison : poisons)
    for (int token : poison.tokens)
      if (forbidden.count(token))
        throw CraftingError("craft_no_overlap: emitted poison overlaps the trigger");
  return poisons;
}

std::vector<PoisonCandidate> craft_with_overlap(const std::vector<Example>& adv_set,
                                                int n) {
  if (n < 1) throw std::invalid_argument("craft_with_overlap: n must be >= 1");
  if (adv_set.empty()) throw std::invalid_argument("craft_with_overlap: empty adv set");
  std::vector<PoisonCandidate> poisons;
  poisons.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Example& src = adv_set[static_cast<std::size_t>(i) % adv_set.size()];
    PoisonCandidate poison;
    poison.tokens = src.tokens;
    poison.label = src.label;
    poison.provenance_id = src.id;
    poisons.push_back(std::move(poison));
  }
  return poisons;
}

Example poison_to_example(const PoisonCandidate& poison, int id) {
  Example ex;
  ex.id = id;
  ex.label = poison.label;
  ex.origin = Origin::Poison;
  ex.tokens = poison.tokens;
  return ex;
}

std::vector<Example> poisons_to_examples(const std::vector<PoisonCandidate>& poisons,
                                         int first_id) {
  std::vector<Example> out;
  out.reserve(poisons.size());
  for (std::size_t i = 0; i < poisons.size(); ++i)
    out.push_back(poison_to_example(poisons[i], first_id + static_cast<int>(i)));
  return out;
}

void save_flip_log(const std::vector<PoisonCandidate>& poisons,
                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.precision(17);
  for (const auto& poison : poisons)
    for (const auto& flip : poison.history)
      out << poison.provenance_id << '\t' << flip.sweep << '\t' << flip.position << '\t'
          << flip.old_token << '\t' << flip.new_token << '\t' << flip.objective_before
          << '\t' << flip.objective_after << '\n';
}

}  // namespace poisonlab
