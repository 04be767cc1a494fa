#ifndef POISONLAB_UNROLL_HPP
#define POISONLAB_UNROLL_HPP

#include <cmath>
#include <vector>

#include "poisonlab/model.hpp"

namespace poisonlab {

// Forward-mode scalar: value plus directional derivative. Running the
// poison example's backward pass over Dual with the parameters seeded by a
// direction vector yields the exact mixed second derivative in one sweep.
struct Dual {
  double v = 0.0;
  double t = 0.0;

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit by design
  Dual(double value, double tangent) : v(value), t(tangent) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.t + b.t}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.t - b.t}; }
inline Dual operator-(Dual a) { return {-a.v, -a.t}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.t * b.v + a.v * b.t}; }
inline Dual operator/(Dual a, Dual b) {
  return {a.v / b.v, (a.t * b.v - a.v * b.t) / (b.v * b.v)};
}
inline Dual& operator+=(Dual& a, Dual b) { return a = a + b; }
inline Dual& operator-=(Dual& a, Dual b) { return a = a - b; }
inline Dual& operator*=(Dual& a, Dual b) { return a = a * b; }
inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, e * a.t};
}
inline Dual log(Dual a) { return {std::log(a.v), a.t / a.v}; }
inline Dual tanh(Dual a) {
  const double th = std::tanh(a.v);
  return {th, (1.0 - th * th) * a.t};
}
inline Dual max(Dual a, Dual b) { return a.v >= b.v ? a : b; }
inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }

// Bring the double overloads into scope so templated passes can call
// exp/log/tanh/max unqualified for both scalar types.
using std::exp;
using std::log;
using std::max;
using std::tanh;

// Free input embeddings of one poison example, decoupled from the shared
// table: the differentiation variable of the crafting gradient.
struct PoisonEmbedding {
  int positions = 0;
  int embed_dim = 0;
  std::vector<double> values;  // positions x embed_dim, row-major
  int label = 1;

  static PoisonEmbedding from_tokens(const ModelState& state,
                                     const std::vector<int>& tokens, int label);
  double* row(int i) { return values.data() + static_cast<std::size_t>(i) * embed_dim; }
  const double* row(int i) const {
    return values.data() + static_cast<std::size_t>(i) * embed_dim;
  }
};

// A bi-level instance the one-step unrolling engine can differentiate:
// inner loss gradient over flat parameters theta, outer adversarial loss,
// and the mixed second derivative d/de of <v, train_grad(theta, e)>.
class UnrollProblem {
 public:
  virtual ~UnrollProblem() = default;
  virtual int theta_size() const = 0;
  virtual int input_size() const = 0;
  virtual std::vector<double> train_grad(const std::vector<double>& theta,
                                         const std::vector<double>& e) const = 0;
  virtual double adv_loss(const std::vector<double>& theta) const = 0;
  virtual std::vector<double> adv_grad(const std::vector<double>& theta) const = 0;
  virtual std::vector<double> mixed_grad(const std::vector<double>& theta,
                                         const std::vector<double>& e,
                                         const std::vector<double>& v) const = 0;
};

// Exact gradient of adv_loss(theta - eta * train_grad(theta, e)) with
// respect to e, via one unrolled step.
std::vector<double> unrolled_grad(const UnrollProblem& problem,
                                  const std::vector<double>& theta,
                                  const std::vector<double>& e, double eta);

// Central-difference oracle for the same quantity.
std::vector<double> fd_grad(const UnrollProblem& problem,
                            const std::vector<double>& theta,
                            const std::vector<double>& e, double eta, double step);

// Mean training gradient over batch plus the poison example, with the
// poison contributing through its free embeddings: head parameters receive
// its gradient, the embedding table does not.
GradientBundle poisoned_train_grad(const ModelState& state,
                                   const std::vector<Example>& batch,
                                   const PoisonEmbedding& poison);

// Unit-weight gradients of the poison example's own loss: the pieces a
// candidate evaluator needs to splice one poison into a cached batch
// gradient.
struct PoisonHeadGrads {
  std::vector<double> hidden_w;
  std::vector<double> hidden_b;
  std::vector<double> out_w;
  std::vector<double> out_b;
  std::vector<double> embed;  // n x d
};
PoisonHeadGrads poison_loss_grads(const ModelState& state,
                                  const PoisonEmbedding& poison);

// The classifier instance of UnrollProblem used by poison crafting.
class ClassifierUnroll final : public UnrollProblem {
 public:
  ClassifierUnroll(const ModelDims& dims, const std::vector<Example>& batch,
                   const std::vector<Example>& adv_set, int poison_positions,
                   int poison_label);

  int theta_size() const override;
  int input_size() const override { return positions_ * dims_.embed_dim; }
  std::vector<double> train_grad(const std::vector<double>& theta,
                                 const std::vector<double>& e) const override;
  double adv_loss(const std::vector<double>& theta) const override;
  std::vector<double> adv_grad(const std::vector<double>& theta) const override;
  std::vector<double> mixed_grad(const std::vector<double>& theta,
                                 const std::vector<double>& e,
                                 const std::vector<double>& v) const override;

 private:
  ModelDims dims_;
  const std::vector<Example>& batch_;
  const std::vector<Example>& adv_;
  int positions_;
  int label_;
};

// d(L_adv(theta_next)) / d(poison embeddings) where
// theta_next = theta - eta * grad(L_train(batch + poison)). Returns an
// n x d row-major matrix.
std::vector<double> unrolled_poison_grad(const ModelState& state,
                                         const PoisonEmbedding& poison,
                                         const std::vector<Example>& batch,
                                         const std::vector<Example>& adv_set,
                                         double eta);

std::vector<double> fd_poison_grad(const ModelState& state,
                                   const PoisonEmbedding& poison,
                                   const std::vector<Example>& batch,
                                   const std::vector<Example>& adv_set, double eta,
                                   double step);

}  // namespace poisonlab

#endif  // POISONLAB_UNROLL_HPP
