#include "poisonlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace poisonlab {

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'L', 'C', 'K', 'P', 'T', '0', '\n'};
constexpr std::uint32_t kCheckpointVersion = 1;

void ensure_finite(const double* values, std::size_t count, const char* what) {
  for (std::size_t i = 0; i < count; ++i)
    if (!std::isfinite(values[i]))
      throw NumericError(std::string("non-finite value in ") + what);
}

}  // namespace

void check_dims(const ModelDims& dims) {
  if (dims.vocab_size < 2) throw ConfigError("model dims: vocab_size must be >= 2");
  if (dims.embed_dim < 1) throw ConfigError("model dims: embed_dim must be >= 1");
  if (dims.depth != 0 && dims.depth != 1) throw ConfigError("model dims: depth must be 0 or 1");
  if (dims.depth == 1 && dims.hidden_dim < 1)
    throw ConfigError("model dims: hidden_dim must be >= 1 at depth 1");
}

ModelState zero_state(const ModelDims& dims) {
  check_dims(dims);
  ModelState s;
  s.dims = dims;
  s.embedding.assign(static_cast<std::size_t>(dims.vocab_size) * dims.embed_dim, 0.0);
  if (dims.depth == 1) {
    s.hidden_w.assign(static_cast<std::size_t>(dims.hidden_dim) * dims.embed_dim, 0.0);
    s.hidden_b.assign(static_cast<std::size_t>(dims.hidden_dim), 0.0);
  }
  s.out_w.assign(2 * static_cast<std::size_t>(dims.head_width()), 0.0);
  s.out_b.assign(2, 0.0);
  return s;
}

GradientBundle zero_gradient(const ModelDims& dims) {
  ModelState s = zero_state(dims);
  GradientBundle g;
  g.dims = dims;
  g.embedding = std::move(s.embedding);
  g.hidden_w = std::move(s.hidden_w);
  g.hidden_b = std::move(s.hidden_b);
  g.out_w = std::move(s.out_w);
  g.out_b = std::move(s.out_b);
  return g;
}

ModelState init_params(const ModelDims& dims, double scale, std::uint64_t seed) {
  if (scale < 0.0) throw ConfigError("init_params: scale must be nonnegative");
  ModelState s = zero_state(dims);
  Rng rng(seed);
  auto fill = [&](std::vector<double>& values) {
    for (auto& v : values) v = uniform_symmetric(rng, scale);
  };
  fill(s.embedding);
  fill(s.hidden_w);
  fill(s.hidden_b);
  fill(s.out_w);
  fill(s.out_b);
  return s;
}

int param_count(const ModelDims& dims) {
  int n = dims.vocab_size * dims.embed_dim + 2 * dims.head_width() + 2;
  if (dims.depth == 1) n += dims.hidden_dim * dims.embed_dim + dims.hidden_dim;
  return n;
}

std::vector<double> pack(const ModelState& state) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(param_count(state.dims)));
  for (const auto* part : {&state.embedding, &state.hidden_w, &state.hidden_b,
                           &state.out_w, &state.out_b})
    flat.insert(flat.end(), part->begin(), part->end());
  return flat;
}

std::vector<double> pack_gradient(const GradientBundle& grad) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(param_count(grad.dims)));
  for (const auto* part : {&grad.embedding, &grad.hidden_w, &grad.hidden_b,
                           &grad.out_w, &grad.out_b})
    flat.insert(flat.end(), part->begin(), part->end());
  return flat;
}

ModelState unpack(const ModelDims& dims, const std::vector<double>& flat) {
  ModelState s = zero_state(dims);
  if (flat.size() != static_cast<std::size_t>(param_count(dims)))
    throw std::invalid_argument("unpack: flat size does not match dims");
  std::size_t at = 0;
  for (auto* part : {&s.embedding, &s.hidden_w, &s.hidden_b, &s.out_w, &s.out_b}) {
    std::copy(flat.begin() + at, flat.begin() + at + part->size(), part->begin());
    at += part->size();
  }
  return s;
}

namespace {

// Shared forward pass; caches what the backward pass needs.
struct ForwardCache {
  std::vector<double> pooled;  // mean embedding, size d
  std::vector<double> hidden;  // tanh activations, size d_h (depth 1)
  std::array<double, 2> logits{};
  std::array<double, 2> probs{};
  double log_denominator = 0.0;  // logsumexp of logits
};

void run_forward(const ModelState& state, const std::vector<int>& tokens,
                 ForwardCache& cache) {
  const ModelDims& dims = state.dims;
  if (tokens.empty()) throw std::invalid_argument("forward: token sequence is empty");
  const int d = dims.embed_dim;
  // Accumulate in sorted id order so pooling is bitwise order-invariant.
  std::vector<int> sorted = tokens;
  std::sort(sorted.begin(), sorted.end());
  cache.pooled.assign(static_cast<std::size_t>(d), 0.0);
  for (int token : sorted) {
    if (token < 0 || token >= dims.vocab_size)
      throw std::invalid_argument("forward: token id " + std::to_string(token) +
                                  " outside vocabulary");
    const double* row = state.embedding_row(token);
    for (int j = 0; j < d; ++j) cache.pooled[static_cast<std::size_t>(j)] += row[j];
  }
  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  for (double& v : cache.pooled) v *= inv_n;
  ensure_finite(cache.pooled.data(), cache.pooled.size(), "pooled embedding");

  const double* head = cache.pooled.data();
  int width = d;
  if (dims.depth == 1) {
    const int dh = dims.hidden_dim;
    cache.hidden.assign(static_cast<std::size_t>(dh), 0.0);
    for (int i = 0; i < dh; ++i) {
      double z = state.hidden_b[static_cast<std::size_t>(i)];
      const double* w = state.hidden_w.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) z += w[j] * cache.pooled[static_cast<std::size_t>(j)];
      cache.hidden[static_cast<std::size_t>(i)] = std::tanh(z);
    }
    ensure_finite(cache.hidden.data(), cache.hidden.size(), "hidden activations");
    head = cache.hidden.data();
    width = dh;
  }

  for (int c = 0; c < 2; ++c) {
    double z = state.out_b[static_cast<std::size_t>(c)];
    const double* w = state.out_w.data() + static_cast<std::size_t>(c) * width;
    for (int j = 0; j < width; ++j) z += w[j] * head[j];
    cache.logits[static_cast<std::size_t>(c)] = z;
  }
  ensure_finite(cache.logits.data(), 2, "logits");

  const double m = std::max(cache.logits[0], cache.logits[1]);
  const double e0 = std::exp(cache.logits[0] - m);
  const double e1 = std::exp(cache.logits[1] - m);
  cache.log_denominator = m + std::log(e0 + e1);
  cache.probs[0] = e0 / (e0 + e1);
  cache.probs[1] = e1 / (e0 + e1);
}

// Accumulates d(loss)/d(params) for one example given dlogits, scaled by
// `weight`. Returns nothing; writes into grad.
void accumulate_backward(const ModelState& state, const std::vector<int>& tokens,
                         const ForwardCache& cache, const std::array<double, 2>& dlogits,
                         double weight, GradientBundle& grad) {
  const ModelDims& dims = state.dims;
  const int d = dims.embed_dim;
  const int width = dims.head_width();
  const double* head = dims.depth == 1 ? cache.hidden.data() : cache.pooled.data();

  std::vector<double> dhead(static_cast<std::size_t>(width), 0.0);
  for (int c = 0; c < 2; ++c) {
    const double g = weight * dlogits[static_cast<std::size_t>(c)];
    double* gw = grad.out_w.data() + static_cast<std::size_t>(c) * width;
    const double* w = state.out_w.data() + static_cast<std::size_t>(c) * width;
    for (int j = 0; j < width; ++j) {
      gw[j] += g * head[j];
      dhead[static_cast<std::size_t>(j)] += g * w[j];
    }
    grad.out_b[static_cast<std::size_t>(c)] += g;
  }

  std::vector<double> dpooled;
  if (dims.depth == 1) {
    const int dh = dims.hidden_dim;
    dpooled.assign(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < dh; ++i) {
      const double h = cache.hidden[static_cast<std::size_t>(i)];
      const double dz = dhead[static_cast<std::size_t>(i)] * (1.0 - h * h);
      double* gw = grad.hidden_w.data() + static_cast<std::size_t>(i) * d;
      const double* w = state.hidden_w.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) {
        gw[j] += dz * cache.pooled[static_cast<std::size_t>(j)];
        dpooled[static_cast<std::size_t>(j)] += dz * w[j];
      }
      grad.hidden_b[static_cast<std::size_t>(i)] += dz;
    }
  } else {
    dpooled = std::move(dhead);
  }

  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  for (int token : tokens) {
    double* row = grad.embedding.data() + static_cast<std::size_t>(token) * d;
    for (int j = 0; j < d; ++j) row[j] += dpooled[static_cast<std::size_t>(j)] * inv_n;
  }
}

}  // namespace

std::array<double, 2> forward_classify(const ModelState& state,
                                       const std::vector<int>& tokens) {
  ForwardCache cache;
  run_forward(state, tokens, cache);
  return cache.probs;
}

int predict_label(const ModelState& state, const std::vector<int>& tokens) {
  auto probs = forward_classify(state, tokens);
  return probs[1] > probs[0] ? 1 : 0;
}

double loss_train(const ModelState& state, const std::vector<Example>& batch) {
  if (batch.empty()) throw std::invalid_argument("loss_train: batch is empty");
  double total = 0.0;
  ForwardCache cache;
  for (const auto& ex : batch) {
    run_forward(state, ex.tokens, cache);
    total += cache.log_denominator - cache.logits[static_cast<std::size_t>(ex.label)];
  }
  const double loss = total / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw NumericError("loss_train: non-finite loss");
  return loss;
}

double loss_adv(const ModelState& state, const std::vector<Example>& adv_set) {
  if (adv_set.empty()) throw std::invalid_argument("loss_adv: adv set is empty");
  return loss_train(state, adv_set);
}

double loss_and_grad(const ModelState& state, const std::vector<Example>& batch,
                     GradientBundle& grad) {
  if (batch.empty()) throw std::invalid_argument("grad_params: batch is empty");
  if (!(grad.dims == state.dims)) grad = zero_gradient(state.dims);
  std::fill(grad.embedding.begin(), grad.embedding.end(), 0.0);
  std::fill(grad.hidden_w.begin(), grad.hidden_w.end(), 0.0);
  std::fill(grad.hidden_b.begin(), grad.hidden_b.end(), 0.0);
  std::fill(grad.out_w.begin(), grad.out_w.end(), 0.0);
  std::fill(grad.out_b.begin(), grad.out_b.end(), 0.0);

  const double weight = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  ForwardCache cache;
  for (const auto& ex : batch) {
    run_forward(state, ex.tokens, cache);
    total += cache.log_denominator - cache.logits[static_cast<std::size_t>(ex.label)];
    std::array<double, 2> dlogits = cache.probs;
    dlogits[static_cast<std::size_t>(ex.label)] -= 1.0;
    accumulate_backward(state, ex.tokens, cache, dlogits, weight, grad);
  }
  const double loss = total * weight;
  if (!std::isfinite(loss)) throw NumericError("loss_and_grad: non-finite loss");
  return loss;
}

GradientBundle grad_params(const ModelState& state, const std::vector<Example>& batch) {
  GradientBundle grad = zero_gradient(state.dims);
  loss_and_grad(state, batch, grad);
  return grad;
}

void apply_gradient(ModelState& state, const GradientBundle& grad, double lr,
                    double scale) {
  if (!(state.dims == grad.dims))
    throw std::invalid_argument("apply_gradient: dims mismatch");
  const double factor = -lr * scale;
  auto axpy = [factor](std::vector<double>& p, const std::vector<double>& g) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += factor * g[i];
  };
  axpy(state.embedding, grad.embedding);
  axpy(state.hidden_w, grad.hidden_w);
  axpy(state.hidden_b, grad.hidden_b);
  axpy(state.out_w, grad.out_w);
  axpy(state.out_b, grad.out_b);
}

ModelState sgd_step(const ModelState& state, const GradientBundle& grad, double lr) {
  ModelState next = state;
  apply_gradient(next, grad, lr);
  return next;
}

void save_checkpoint(const ModelState& state, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  auto write_u32 = [&](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  write_u32(kCheckpointVersion);
  write_u32(static_cast<std::uint32_t>(state.dims.vocab_size));
  write_u32(static_cast<std::uint32_t>(state.dims.embed_dim));
  write_u32(static_cast<std::uint32_t>(state.dims.hidden_dim));
  write_u32(static_cast<std::uint32_t>(state.dims.depth));
  for (const auto* part : {&state.embedding, &state.hidden_w, &state.hidden_b,
                           &state.out_w, &state.out_b})
    out.write(reinterpret_cast<const char*>(part->data()),
              static_cast<std::streamsize>(part->size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw ParseError("bad checkpoint magic in " + path, 1);
  auto read_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  };
  const std::uint32_t version = read_u32();
  if (version != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 1);
  ModelDims dims;
  dims.vocab_size = static_cast<int>(read_u32());
  dims.embed_dim = static_cast<int>(read_u32());
  dims.hidden_dim = static_cast<int>(read_u32());
  dims.depth = static_cast<int>(read_u32());
  if (!in) throw ParseError("truncated checkpoint header in " + path, 1);
  check_dims(dims);
  ModelState state = zero_state(dims);
  for (auto* part : {&state.embedding, &state.hidden_w, &state.hidden_b,
                     &state.out_w, &state.out_b})
    in.read(reinterpret_cast<char*>(part->data()),
            static_cast<std::streamsize>(part->size() * sizeof(double)));
  if (!in) throw ParseError("truncated checkpoint payload in " + path, 1);
  return state;
}

}  // namespace poisonlab
