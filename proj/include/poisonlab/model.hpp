#ifndef POISONLAB_MODEL_HPP
#define POISONLAB_MODEL_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "poisonlab/common.hpp"
#include "poisonlab/corpus.hpp"

namespace poisonlab {

// Mean-pooled bag-of-embeddings classifier with an optional tanh hidden
// layer. depth 0: logits = out_w * mean(e) + out_b. depth 1 inserts
// h = tanh(hidden_w * mean(e) + hidden_b) before the output layer.
struct ModelDims {
  int vocab_size = 0;
  int embed_dim = 0;
  int hidden_dim = 0;  // ignored at depth 0
  int depth = 0;       // 0 or 1

  int head_width() const { return depth == 1 ? hidden_dim : embed_dim; }
  bool operator==(const ModelDims&) const = default;
};

struct ModelState {
  ModelDims dims;
  std::vector<double> embedding;  // vocab_size x embed_dim, row-major
  std::vector<double> hidden_w;   // hidden_dim x embed_dim (depth 1)
  std::vector<double> hidden_b;   // hidden_dim (depth 1)
  std::vector<double> out_w;      // 2 x head_width
  std::vector<double> out_b;      // 2

  const double* embedding_row(int token) const {
    return embedding.data() + static_cast<std::size_t>(token) * dims.embed_dim;
  }
};

struct GradientBundle {
  ModelDims dims;
  std::vector<double> embedding;
  std::vector<double> hidden_w;
  std::vector<double> hidden_b;
  std::vector<double> out_w;
  std::vector<double> out_b;
};

void check_dims(const ModelDims& dims);
ModelState zero_state(const ModelDims& dims);
GradientBundle zero_gradient(const ModelDims& dims);

// Entries i.i.d. uniform in [-scale, scale]; deterministic given seed.
ModelState init_params(const ModelDims& dims, double scale, std::uint64_t seed);

int param_count(const ModelDims& dims);
std::vector<double> pack(const ModelState& state);
ModelState unpack(const ModelDims& dims, const std::vector<double>& flat);
std::vector<double> pack_gradient(const GradientBundle& grad);

std::array<double, 2> forward_classify(const ModelState& state,
                                       const std::vector<int>& tokens);
int predict_label(const ModelState& state, const std::vector<int>& tokens);

double loss_train(const ModelState& state, const std::vector<Example>& batch);
// Identical computation to loss_train; the adv set already carries the
// adversary's desired labels.
double loss_adv(const ModelState& state, const std::vector<Example>& adv_set);

GradientBundle grad_params(const ModelState& state, const std::vector<Example>& batch);
// Single pass returning the batch loss alongside its gradient.
double loss_and_grad(const ModelState& state, const std::vector<Example>& batch,
                     GradientBundle& grad);

ModelState sgd_step(const ModelState& state, const GradientBundle& grad, double lr);
// In-place variant used by inner loops; axpy with factor -lr * scale.
void apply_gradient(ModelState& state, const GradientBundle& grad, double lr,
                    double scale = 1.0);

// Versioned little-endian binary serialization; round-trip exact for
// double precision.
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace poisonlab

#endif  // POISONLAB_MODEL_HPP
