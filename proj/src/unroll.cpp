#include "poisonlab/unroll.hpp"

#include <algorithm>

namespace poisonlab {

PoisonEmbedding PoisonEmbedding::from_tokens(const ModelState& state,
                                             const std::vector<int>& tokens,
                                             int label) {
  if (tokens.empty())
    throw std::invalid_argument("PoisonEmbedding: token sequence is empty");
  PoisonEmbedding e;
  e.positions = static_cast<int>(tokens.size());
  e.embed_dim = state.dims.embed_dim;
  e.label = label;
  e.values.reserve(static_cast<std::size_t>(e.positions) * e.embed_dim);
  for (int token : tokens) {
    if (token < 0 || token >= state.dims.vocab_size)
      throw std::invalid_argument("PoisonEmbedding: token id outside vocabulary");
    const double* row = state.embedding_row(token);
    e.values.insert(e.values.end(), row, row + e.embed_dim);
  }
  return e;
}

namespace {

// Forward and backward through one poison example whose input embeddings
// are free values. Templated over the scalar so the same pass yields
// plain gradients (T = double) and directional second derivatives
// (T = Dual, head parameters seeded with a tangent direction).
template <typename T>
struct PoisonPass {
  std::vector<T> d_hidden_w;
  std::vector<T> d_hidden_b;
  std::vector<T> d_out_w;
  std::vector<T> d_out_b;
  std::vector<T> d_embed;  // n x d
};

template <typename T>
PoisonPass<T> run_poison_pass(const ModelDims& dims, const T* hidden_w,
                              const T* hidden_b, const T* out_w, const T* out_b,
                              const PoisonEmbedding& poison) {
  const int d = dims.embed_dim;
  const int n = poison.positions;
  const int width = dims.head_width();
  if (n < 1) throw std::invalid_argument("poison pass: no positions");
  if (poison.embed_dim != d) throw std::invalid_argument("poison pass: embed_dim mismatch");
  if (poison.label != 0 && poison.label != 1)
    throw std::invalid_argument("poison pass: label must be 0 or 1");

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<T> pooled(static_cast<std::size_t>(d), T(0.0));
  for (int i = 0; i < n; ++i) {
    const double* row = poison.row(i);
    for (int j = 0; j < d; ++j) pooled[static_cast<std::size_t>(j)] += T(row[j]);
  }
  for (auto& v : pooled) v *= T(inv_n);

  std::vector<T> hidden;
  const T* head = pooled.data();
  if (dims.depth == 1) {
    hidden.assign(static_cast<std::size_t>(dims.hidden_dim), T(0.0));
    for (int i = 0; i < dims.hidden_dim; ++i) {
      T z = hidden_b[i];
      const T* w = hidden_w + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) z += w[j] * pooled[static_cast<std::size_t>(j)];
      hidden[static_cast<std::size_t>(i)] = tanh(z);
    }
    head = hidden.data();
  }

  T logits[2];
  for (int c = 0; c < 2; ++c) {
    T z = out_b[c];
    const T* w = out_w + static_cast<std::size_t>(c) * width;
    for (int j = 0; j < width; ++j) z += w[j] * head[j];
    logits[c] = z;
  }
  const T shift = max(logits[0], logits[1]);
  const T e0 = exp(logits[0] - shift);
  const T e1 = exp(logits[1] - shift);
  const T denom = e0 + e1;
  T probs[2] = {e0 / denom, e1 / denom};

  T dlogits[2] = {probs[0], probs[1]};
  dlogits[poison.label] -= T(1.0);

  PoisonPass<T> out;
  out.d_out_w.assign(2 * static_cast<std::size_t>(width), T(0.0));
  out.d_out_b.assign(2, T(0.0));
  std::vector<T> dhead(static_cast<std::size_t>(width), T(0.0));
  for (int c = 0; c < 2; ++c) {
    T* gw = out.d_out_w.data() + static_cast<std::size_t>(c) * width;
    const T* w = out_w + static_cast<std::size_t>(c) * width;
    for (int j = 0; j < width; ++j) {
      gw[j] = dlogits[c] * head[j];
      dhead[static_cast<std::size_t>(j)] += dlogits[c] * w[j];
    }
    out.d_out_b[static_cast<std::size_t>(c)] = dlogits[c];
  }

  std::vector<T> dpooled;
  if (dims.depth == 1) {
    out.d_hidden_w.assign(static_cast<std::size_t>(dims.hidden_dim) * d, T(0.0));
    out.d_hidden_b.assign(static_cast<std::size_t>(dims.hidden_dim), T(0.0));
    dpooled.assign(static_cast<std::size_t>(d), T(0.0));
    for (int i = 0; i < dims.hidden_dim; ++i) {
      const T h = hidden[static_cast<std::size_t>(i)];
      const T dz = dhead[static_cast<std::size_t>(i)] * (T(1.0) - h * h);
      T* gw = out.d_hidden_w.data() + static_cast<std::size_t>(i) * d;
      const T* w = hidden_w + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) {
        gw[j] = dz * pooled[static_cast<std::size_t>(j)];
        dpooled[static_cast<std::size_t>(j)] += dz * w[j];
      }
      out.d_hidden_b[static_cast<std::size_t>(i)] = dz;
    }
  } else {
    dpooled = std::move(dhead);
  }

  // Mean pooling: every position receives dpooled / n.
  out.d_embed.assign(static_cast<std::size_t>(n) * d, T(0.0));
  for (int i = 0; i < n; ++i) {
    T* row = out.d_embed.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) row[j] = dpooled[static_cast<std::size_t>(j)] * T(inv_n);
  }
  return out;
}

}  // namespace

GradientBundle poisoned_train_grad(const ModelState& state,
                                   const std::vector<Example>& batch,
                                   const PoisonEmbedding& poison) {
  if (batch.empty()) throw std::invalid_argument("poisoned_train_grad: batch is empty");
  GradientBundle grad = grad_params(state, batch);
  const double b = static_cast<double>(batch.size());
  const double clean_weight = b / (b + 1.0);
  const double poison_weight = 1.0 / (b + 1.0);
  auto scale = [&](std::vector<double>& values) {
    for (auto& v : values) v *= clean_weight;
  };
  scale(grad.embedding);
  scale(grad.hidden_w);
  scale(grad.hidden_b);
  scale(grad.out_w);
  scale(grad.out_b);

  PoisonPass<double> pass =
      run_poison_pass<double>(state.dims, state.hidden_w.data(), state.hidden_b.data(),
                              state.out_w.data(), state.out_b.data(), poison);
  auto add = [&](std::vector<double>& into, const std::vector<double>& from) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += poison_weight * from[i];
  };
  add(grad.hidden_w, pass.d_hidden_w);
  add(grad.hidden_b, pass.d_hidden_b);
  add(grad.out_w, pass.d_out_w);
  add(grad.out_b, pass.d_out_b);
  // Decoupled poison: the shared table receives nothing from it.
  return grad;
}

std::vector<double> unrolled_grad(const UnrollProblem& problem,
                                  const std::vector<double>& theta,
                                  const std::vector<double>& e, double eta) {
  std::vector<double> g = problem.train_grad(theta, e);
  std::vector<double> theta_next(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) theta_next[i] = theta[i] - eta * g[i];
  std::vector<double> v = problem.adv_grad(theta_next);
  std::vector<double> mixed = problem.mixed_grad(theta, e, v);
  for (auto& value : mixed) value *= -eta;
  return mixed;
}

std::vector<double> fd_grad(const UnrollProblem& problem,
                            const std::vector<double>& theta,
                            const std::vector<double>& e, double eta, double step) {
  auto objective = [&](const std::vector<double>& probe) {
    std::vector<double> g = problem.train_grad(theta, probe);
    std::vector<double> theta_next(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) theta_next[i] = theta[i] - eta * g[i];
    return problem.adv_loss(theta_next);
  };
  std::vector<double> out(e.size());
  std::vector<double> probe = e;
  for (std::size_t k = 0; k < e.size(); ++k) {
    probe[k] = e[k] + step;
    const double up = objective(probe);
    probe[k] = e[k] - step;
    const double down = objective(probe);
    probe[k] = e[k];
    out[k] = (up - down) / (2.0 * step);
  }
  return out;
}

ClassifierUnroll::ClassifierUnroll(const ModelDims& dims,
                                   const std::vector<Example>& batch,
                                   const std::vector<Example>& adv_set,
                                   int poison_positions, int poison_label)
    : dims_(dims), batch_(batch), adv_(adv_set), positions_(poison_positions),
      label_(poison_label) {
  check_dims(dims);
  if (positions_ < 1) throw std::invalid_argument("ClassifierUnroll: need >= 1 position");
}

int ClassifierUnroll::theta_size() const { return param_count(dims_); }

std::vector<double> ClassifierUnroll::train_grad(const std::vector<double>& theta,
                                                 const std::vector<double>& e) const {
  const ModelState state = unpack(dims_, theta);
  PoisonEmbedding poison;
  poison.positions = positions_;
  poison.embed_dim = dims_.embed_dim;
  poison.values = e;
  poison.label = label_;
  return pack_gradient(poisoned_train_grad(state, batch_, poison));
}

double ClassifierUnroll::adv_loss(const std::vector<double>& theta) const {
  return poisonlab::loss_adv(unpack(dims_, theta), adv_);
}

std::vector<double> ClassifierUnroll::adv_grad(const std::vector<double>& theta) const {
  return pack_gradient(grad_params(unpack(dims_, theta), adv_));
}

std::vector<double> ClassifierUnroll::mixed_grad(const std::vector<double>& theta,
                                                 const std::vector<double>& e,
                                                 const std::vector<double>& v) const {
  const ModelState state = unpack(dims_, theta);
  const ModelState direction = unpack(dims_, v);
  auto lift = [](const std::vector<double>& values, const std::vector<double>& tangents) {
    std::vector<Dual> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = Dual(values[i], tangents[i]);
    return out;
  };
  const std::vector<Dual> hw = lift(state.hidden_w, direction.hidden_w);
  const std::vector<Dual> hb = lift(state.hidden_b, direction.hidden_b);
  const std::vector<Dual> ow = lift(state.out_w, direction.out_w);
  const std::vector<Dual> ob = lift(state.out_b, direction.out_b);

  PoisonEmbedding poison;
  poison.positions = positions_;
  poison.embed_dim = dims_.embed_dim;
  poison.values = e;
  poison.label = label_;
  PoisonPass<Dual> pass = run_poison_pass<Dual>(dims_, hw.data(), hb.data(), ow.data(),
                                                ob.data(), poison);
  // The poison's share of the mean training gradient.
  const double poison_weight = 1.0 / (static_cast<double>(batch_.size()) + 1.0);
  std::vector<double> out(pass.d_embed.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = poison_weight * pass.d_embed[i].t;
  return out;
}

std::vector<double> unrolled_poison_grad(const ModelState& state,
                                         const PoisonEmbedding& poison,
                                         const std::vector<Example>& batch,
                                         const std::vector<Example>& adv_set,
                                         double eta) {
  if (poison.embed_dim != state.dims.embed_dim)
    throw std::invalid_argument("unrolled_poison_grad: embedding width mismatch");
  ClassifierUnroll problem(state.dims, batch, adv_set, poison.positions, poison.label);
  return unrolled_grad(problem, pack(state), poison.values, eta);
}

std::vector<double> fd_poison_grad(const ModelState& state,
                                   const PoisonEmbedding& poison,
                                   const std::vector<Example>& batch,
                                   const std::vector<Example>& adv_set, double eta,
                                   double step) {
  if (poison.embed_dim != state.dims.embed_dim)
    throw std::invalid_argument("fd_poison_grad: embedding width mismatch");
  ClassifierUnroll problem(state.dims, batch, adv_set, poison.positions, poison.label);
  return fd_grad(problem, pack(state), poison.values, eta, step);
}

PoisonHeadGrads poison_loss_grads(const ModelState& state,
                                  const PoisonEmbedding& poison) {
  PoisonPass<double> pass =
      run_poison_pass<double>(state.dims, state.hidden_w.data(), state.hidden_b.data(),
                              state.out_w.data(), state.out_b.data(), poison);
  PoisonHeadGrads out;
  out.hidden_w = std::move(pass.d_hidden_w);
  out.hidden_b = std::move(pass.d_hidden_b);
  out.out_w = std::move(pass.d_out_w);
  out.out_b = std::move(pass.d_out_b);
  out.embed = std::move(pass.d_embed);
  return out;
}

}  // namespace poisonlab
