#include "poisonlab/defense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace poisonlab {

NGramLM::NGramLM(int order, double k, int vocab_size)
    : order_(order), k_(k), vocab_size_(vocab_size) {
  if (order != 1 && order != 2) throw ConfigError("ngram: order must be 1 or 2");
  if (k <= 0.0) throw ConfigError("ngram: smoothing constant must be > 0");
  if (vocab_size < 2) throw ConfigError("ngram: vocab too small");
  unigram_.assign(static_cast<std::size_t>(vocab_size), 0);
  context_total_.assign(static_cast<std::size_t>(vocab_size), 0);
}

void NGramLM::fit(const std::vector<Example>& reference) {
  for (const auto& ex : reference) {
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      const int token = ex.tokens[i];
      if (token < 0 || token >= vocab_size_)
        throw std::invalid_argument("ngram fit: token outside vocabulary");
      ++unigram_[static_cast<std::size_t>(token)];
      ++total_;
      if (i > 0) {
        const int context = ex.tokens[i - 1];
        ++bigram_[static_cast<std::uint64_t>(context) * vocab_size_ + token];
        ++context_total_[static_cast<std::size_t>(context)];
      }
    }
  }
}

double NGramLM::token_prob(int token) const {
  const double kv = k_ * vocab_size_;
  return (static_cast<double>(unigram_[static_cast<std::size_t>(token)]) + k_) /
         (static_cast<double>(total_) + kv);
}

double NGramLM::token_prob(int token, int context) const {
  const double kv = k_ * vocab_size_;
  const auto it = bigram_.find(static_cast<std::uint64_t>(context) * vocab_size_ + token);
  const double count = it == bigram_.end() ? 0.0 : static_cast<double>(it->second);
  return (count + k_) /
         (static_cast<double>(context_total_[static_cast<std::size_t>(context)]) + kv);
}

double NGramLM::sequence_log_prob(const std::vector<int>& tokens) const {
  if (tokens.empty()) throw std::invalid_argument("ngram: empty token sequence");
  double log_prob = std::log(token_prob(tokens.front()));
  for (std::size_t i = 1; i < tokens.size(); ++i)
    log_prob += order_ == 2 ? std::log(token_prob(tokens[i], tokens[i - 1]))
                            : std::log(token_prob(tokens[i]));
  return log_prob;
}

double NGramLM::perplexity(const std::vector<int>& tokens) const {
  return std::exp(-sequence_log_prob(tokens) / static_cast<double>(tokens.size()));
}

double perplexity(const NGramLM& lm, const std::vector<int>& tokens) {
  return lm.perplexity(tokens);
}

std::vector<int> recall_curve(const std::vector<bool>& poison_flags) {
  std::vector<int> recall(poison_flags.size());
  int found = 0;
  for (std::size_t i = 0; i < poison_flags.size(); ++i) {
    if (poison_flags[i]) ++found;
    recall[i] = found;
  }
  return recall;
}

namespace {

// Shared ranking assembly: sorts by score in the stated direction, breaks
// ties by smaller example id, and attaches the recall curve.
RankedFilterReport assemble_report(std::vector<RankedEntry> entries, bool ascending) {
  std::sort(entries.begin(), entries.end(), [ascending](const RankedEntry& a,
                                                        const RankedEntry& b) {
    if (a.score != b.score) return ascending ? a.score < b.score : a.score > b.score;
    return a.example_id < b.example_id;
  });
  RankedFilterReport report;
  report.entries = std::move(entries);
  std::vector<bool> flags(report.entries.size());
  for (std::size_t i = 0; i < flags.size(); ++i) flags[i] = report.entries[i].is_poison;
  report.recall = recall_curve(flags);
  report.poison_total = report.recall.empty() ? 0 : report.recall.back();
  return report;
}

}  // namespace

RankedFilterReport perplexity_rank(const std::vector<Example>& train_set,
                                   const std::vector<Example>& reference, int order,
                                   double k) {
  if (reference.empty()) throw std::invalid_argument("perplexity_rank: empty reference corpus");
  int vocab_size = 0;
  for (const auto& ex : reference)
    for (int token : ex.tokens) vocab_size = std::max(vocab_size, token + 1);
  for (const auto& ex : train_set)
    for (int token : ex.tokens) vocab_size = std::max(vocab_size, token + 1);
  NGramLM lm(order, k, std::max(2, vocab_size));
  lm.fit(reference);

  std::vector<RankedEntry> entries;
  entries.reserve(train_set.size());
  for (const auto& ex : train_set)
    entries.push_back({ex.id, lm.perplexity(ex.tokens), ex.origin == Origin::Poison});
  return assemble_report(std::move(entries), /*ascending=*/false);
}

std::vector<double> example_representation(const ModelState& state,
                                           const std::vector<int>& tokens) {
  if (tokens.empty())
    throw std::invalid_argument("example_representation: empty token sequence");
  const int d = state.dims.embed_dim;
  std::vector<int> sorted = tokens;
  std::sort(sorted.begin(), sorted.end());  // bitwise order-invariant pooling
  std::vector<double> pooled(static_cast<std::size_t>(d), 0.0);
  for (int token : sorted) {
    if (token < 0 || token >= state.dims.vocab_size)
      throw std::invalid_argument("example_representation: token outside vocabulary");
    const double* row = state.embedding_row(token);
    for (int j = 0; j < d; ++j) pooled[static_cast<std::size_t>(j)] += row[j];
  }
  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  for (auto& v : pooled) v *= inv_n;
  if (state.dims.depth == 0) return pooled;

  std::vector<double> hidden(static_cast<std::size_t>(state.dims.hidden_dim), 0.0);
  for (int i = 0; i < state.dims.hidden_dim; ++i) {
    double z = state.hidden_b[static_cast<std::size_t>(i)];
    const double* w = state.hidden_w.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) z += w[j] * pooled[static_cast<std::size_t>(j)];
    hidden[static_cast<std::size_t>(i)] = std::tanh(z);
  }
  return hidden;
}

std::vector<double> representations_matrix(const ModelState& state,
                                           const std::vector<Example>& examples) {
  const int width = state.dims.head_width();
  std::vector<double> rows;
  rows.reserve(examples.size() * static_cast<std::size_t>(width));
  for (const auto& ex : examples) {
    const std::vector<double> rep = example_representation(state, ex.tokens);
    rows.insert(rows.end(), rep.begin(), rep.end());
  }
  return rows;
}

RankedFilterReport embedding_distance_rank(const ModelState& poisoned_model,
                                           const std::vector<Example>& train_set,
                                           const std::vector<Example>& trigger_test,
                                           int desired_label) {
  if (trigger_test.empty())
    throw std::invalid_argument("embedding_distance_rank: empty trigger test set");

  // Anchor on the test examples the poisoned model actually misclassifies;
  // fall back to the whole set when the attack never fired.
  std::vector<const Example*> anchors;
  for (const auto& ex : trigger_test)
    if (predict_label(poisoned_model, ex.tokens) == desired_label) anchors.push_back(&ex);
  bool fallback = false;
  if (anchors.empty()) {
    fallback = true;
    for (const auto& ex : trigger_test) anchors.push_back(&ex);
  }

  const int width = poisoned_model.dims.head_width();
  std::vector<double> anchor_reps;
  anchor_reps.reserve(anchors.size() * static_cast<std::size_t>(width));
  for (const auto* ex : anchors) {
    const auto rep = example_representation(poisoned_model, ex->tokens);
    anchor_reps.insert(anchor_reps.end(), rep.begin(), rep.end());
  }

  std::vector<RankedEntry> entries;
  entries.reserve(train_set.size());
  for (const auto& ex : train_set) {
    const auto rep = example_representation(poisoned_model, ex.tokens);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const double* anchor = anchor_reps.data() + a * static_cast<std::size_t>(width);
      double dist2 = 0.0;
      for (int j = 0; j < width; ++j) {
        const double delta = rep[static_cast<std::size_t>(j)] - anchor[j];
        dist2 += delta * delta;
      }
      best = std::min(best, dist2);
    }
    entries.push_back({ex.id, std::sqrt(best), ex.origin == Origin::Poison});
  }
  RankedFilterReport report = assemble_report(std::move(entries), /*ascending=*/true);
  report.used_fallback = fallback;
  return report;
}

namespace {

// Largest eigenpair of a symmetric d x d matrix by power iteration.
// Returns false when the operator is (numerically) zero.
bool power_iteration(const std::vector<double>& matrix, int d, std::uint64_t seed,
                     std::vector<double>& eigenvector, double& eigenvalue) {
  constexpr double kTolerance = 1e-9;
  constexpr int kMaxIterations = 1000;
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(d));
  for (auto& x : v) x = uniform_symmetric(rng, 1.0);
  std::vector<double> av(static_cast<std::size_t>(d));
  double lambda = 0.0;
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return false;
    for (auto& x : v) x /= norm;

    for (int i = 0; i < d; ++i) {
      double sum = 0.0;
      const double* row = matrix.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) sum += row[j] * v[static_cast<std::size_t>(j)];
      av[static_cast<std::size_t>(i)] = sum;
    }
    lambda = 0.0;
    for (int i = 0; i < d; ++i) lambda += v[static_cast<std::size_t>(i)] * av[static_cast<std::size_t>(i)];

    double residual = 0.0;
    for (int i = 0; i < d; ++i)
      residual = std::max(residual, std::abs(av[static_cast<std::size_t>(i)] -
                                             lambda * v[static_cast<std::size_t>(i)]));
    if (residual <= kTolerance * std::max(1.0, std::abs(lambda))) {
      if (std::abs(lambda) <= 1e-300) return false;
      v = av;
      double n2 = 0.0;
      for (double x : v) n2 += x * x;
      n2 = std::sqrt(n2);
      if (n2 == 0.0) return false;
      for (auto& x : v) x /= n2;
      eigenvector = v;
      eigenvalue = lambda;
      return true;
    }
    v = av;
  }
  eigenvector = v;
  double norm = 0.0;
  for (double x : eigenvector) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0 || std::abs(lambda) <= 1e-300) return false;
  for (auto& x : eigenvector) x /= norm;
  eigenvalue = lambda;
  return true;
}

}  // namespace

PcaResult pca_project(const std::vector<double>& rows, int m, int d) {
  if (m < 2) throw std::invalid_argument("pca_project: need at least two rows");
  if (rows.size() != static_cast<std::size_t>(m) * d)
    throw std::invalid_argument("pca_project: shape mismatch");

  std::vector<double> centered = rows;
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j)
      mean[static_cast<std::size_t>(j)] += rows[static_cast<std::size_t>(i) * d + j];
  for (auto& v : mean) v /= static_cast<double>(m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j)
      centered[static_cast<std::size_t>(i) * d + j] -= mean[static_cast<std::size_t>(j)];

  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  const double inv = 1.0 / static_cast<double>(m - 1);
  for (int i = 0; i < m; ++i) {
    const double* row = centered.data() + static_cast<std::size_t>(i) * d;
    for (int a = 0; a < d; ++a)
      for (int b = a; b < d; ++b)
        cov[static_cast<std::size_t>(a) * d + b] += row[a] * row[b] * inv;
  }
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < a; ++b)
      cov[static_cast<std::size_t>(a) * d + b] = cov[static_cast<std::size_t>(b) * d + a];

  PcaResult result;
  result.coords.assign(static_cast<std::size_t>(m) * 2, 0.0);
  result.components.assign(static_cast<std::size_t>(2) * d, 0.0);

  std::vector<double> work = cov;
  for (int component = 0; component < 2; ++component) {
    std::vector<double> v;
    double lambda = 0.0;
    if (!power_iteration(work, d, 0x9c0ffee + static_cast<std::uint64_t>(component), v,
                         lambda) ||
        lambda <= 0.0) {
      if (component == 0) result.degenerate = true;
      break;
    }
    // Deterministic sign: largest-magnitude coordinate is positive.
    int pivot = 0;
    for (int j = 1; j < d; ++j)
      if (std::abs(v[static_cast<std::size_t>(j)]) > std::abs(v[static_cast<std::size_t>(pivot)]))
        pivot = j;
    if (v[static_cast<std::size_t>(pivot)] < 0.0)
      for (auto& x : v) x = -x;

    result.explained_variance[static_cast<std::size_t>(component)] = lambda;
    for (int j = 0; j < d; ++j)
      result.components[static_cast<std::size_t>(component) * d + j] =
          v[static_cast<std::size_t>(j)];
    for (int i = 0; i < m; ++i) {
      double proj = 0.0;
      const double* row = centered.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) proj += row[j] * v[static_cast<std::size_t>(j)];
      result.coords[static_cast<std::size_t>(i) * 2 + component] = proj;
    }
    // Deflate: work -= lambda v v^T.
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        work[static_cast<std::size_t>(a) * d + b] -=
            lambda * v[static_cast<std::size_t>(a)] * v[static_cast<std::size_t>(b)];
  }
  return result;
}

TrainTrace early_stopping_study(const std::vector<Example>& poisoned_train,
                                const std::vector<Example>& validation,
                                const std::vector<Example>& trigger_test,
                                const ModelDims& dims, std::uint64_t victim_seed,
                                const TrainConfig& config, int desired_label) {
  if (trigger_test.empty())
    throw std::invalid_argument("early_stopping_study: empty trigger test set");
  TrainHooks hooks;
  hooks.attack_metric = [&trigger_test, desired_label](const ModelState& state) {
    int hits = 0;
    for (const auto& ex : trigger_test)
      if (predict_label(state, ex.tokens) == desired_label) ++hits;
    return static_cast<double>(hits) / static_cast<double>(trigger_test.size());
  };
  auto [state, trace] =
      train_from_seed(dims, victim_seed, poisoned_train, validation, config, hooks);
  (void)state;
  return trace;
}

void write_report_csv(const RankedFilterReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.precision(17);
  out << "rank,example_id,score,is_poison\n";
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    const auto& e = report.entries[i];
    out << i + 1 << ',' << e.example_id << ',' << e.score << ','
        << (e.is_poison ? 1 : 0) << '\n';
  }
}

void write_recall_csv(const std::vector<int>& recall, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "k,found\n";
  for (std::size_t i = 0; i < recall.size(); ++i)
    out << i + 1 << ',' << recall[i] << '\n';
}

void write_trace_csv(const TrainTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.precision(17);
  out << "epoch,validation_accuracy,train_loss,attack_success\n";
  for (const auto& record : trace.records) {
    out << record.epoch << ',' << record.validation_accuracy << ',' << record.train_loss
        << ',';
    if (record.attack_success) out << *record.attack_success;
    out << '\n';
  }
}

void write_pca_csv(const std::vector<Example>& examples, const PcaResult& pca,
                   const std::string& path) {
  if (pca.coords.size() != examples.size() * 2)
    throw std::invalid_argument("write_pca_csv: row count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.precision(17);
  out << "example_id,origin,x,y\n";
  for (std::size_t i = 0; i < examples.size(); ++i)
    out << examples[i].id << ',' << origin_name(examples[i].origin) << ','
        << pca.coords[i * 2] << ',' << pca.coords[i * 2 + 1] << '\n';
}

}  // namespace poisonlab
