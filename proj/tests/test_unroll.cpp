#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "poisonlab/unroll.hpp"
#include "test_util.hpp"

using namespace poisonlab;

namespace {

// One-parameter pluggable instance with closed-form pieces:
// L_train = (theta - e)^2, L_adv = theta^2. The unrolled gradient is
// 4 * eta * theta_next.
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

struct Fixture {
  ModelState state;
  std::vector<Example> batch;
  std::vector<Example> adv;
  PoisonEmbedding poison;
};

Fixture random_fixture(Rng& rng, int depth, int trial) {
  Fixture f;
  const ModelDims dims{50, 8, 6, depth};
  f.state = init_params(dims, 0.25, 4000 + static_cast<std::uint64_t>(trial));
  f.batch = testutil::random_batch(rng, 16, dims.vocab_size, 10);
  f.adv = testutil::random_batch(rng, 8, dims.vocab_size, 10);
  for (auto& ex : f.adv) ex.label = 1;
  f.poison = testutil::random_poison(rng, 6, dims.embed_dim, 0.3, 1);
  return f;
}

}  // namespace

TEST_CASE("dual arithmetic differentiates elementary functions") {
  const Dual x(0.7, 1.0);
  CHECK(exp(x).t == doctest::Approx(std::exp(0.7)).epsilon(1e-12));
  CHECK(log(x).t == doctest::Approx(1.0 / 0.7).epsilon(1e-12));
  const double th = std::tanh(0.7);
  CHECK(tanh(x).t == doctest::Approx(1.0 - th * th).epsilon(1e-12));
  const Dual y = x * x + Dual(2.0) * x;  // d/dx (x^2 + 2x) = 2x + 2
  CHECK(y.t == doctest::Approx(2.0 * 0.7 + 2.0).epsilon(1e-12));
  const Dual q = Dual(1.0) / x;
  CHECK(q.t == doctest::Approx(-1.0 / (0.7 * 0.7)).epsilon(1e-12));
}

TEST_CASE("scalar closed-form oracle: the unrolled gradient is 0.32") {
  const ScalarQuadratic problem;
  const std::vector<double> theta{1.0};
  const std::vector<double> e{0.0};
  const double eta = 0.1;
  const auto exact = unrolled_grad(problem, theta, e, eta);
  REQUIRE(exact.size() == 1);
  CHECK(exact[0] == doctest::Approx(0.32).epsilon(1e-12));
  const auto fd = fd_grad(problem, theta, e, eta, 1e-5);
  CHECK(std::fabs(fd[0] - 0.32) <= 1e-6);
}

TEST_CASE("eta = 0 gives the zero matrix") {
  Rng rng(91);
  for (int depth : {0, 1}) {
    const Fixture f = random_fixture(rng, depth, depth);
    const auto exact = unrolled_poison_grad(f.state, f.poison, f.batch, f.adv, 0.0);
    for (double v : exact) CHECK(std::fabs(v) <= 1e-10);
    const auto fd = fd_poison_grad(f.state, f.poison, f.batch, f.adv, 0.0, 1e-5);
    for (double v : fd) CHECK(std::fabs(v) <= 1e-10);
  }
}

TEST_CASE("unrolled_poison_grad matches finite differences on 100 random configurations") {
  Rng rng(4242);
  for (int trial = 0; trial < 100; ++trial) {
    const Fixture f = random_fixture(rng, trial % 2, trial);
    const double eta = 0.1 + 0.1 * (trial % 4);
    const auto exact = unrolled_poison_grad(f.state, f.poison, f.batch, f.adv, eta);
    const auto fd = fd_poison_grad(f.state, f.poison, f.batch, f.adv, eta, 1e-5);
    std::size_t bad = 0;
    const bool ok = testutil::allclose(exact, fd, 1e-5, 1e-9, &bad);
    CAPTURE(trial);
    CAPTURE(bad);
    CHECK(ok);
  }
}

TEST_CASE("the poison contributes nothing to the embedding-table gradient") {
  Rng rng(7);
  const Fixture f = random_fixture(rng, 1, 0);
  const GradientBundle combined = poisoned_train_grad(f.state, f.batch, f.poison);
  const GradientBundle clean = grad_params(f.state, f.batch);
  const double scale =
      static_cast<double>(f.batch.size()) / (static_cast<double>(f.batch.size()) + 1.0);
  for (std::size_t i = 0; i < combined.embedding.size(); ++i)
    CHECK(combined.embedding[i] == doctest::Approx(clean.embedding[i] * scale).epsilon(1e-14));
  // Head parameters do shift.
  double delta = 0.0;
  for (std::size_t i = 0; i < combined.out_w.size(); ++i)
    delta += std::fabs(combined.out_w[i] - clean.out_w[i] * scale);
  CHECK(delta > 0.0);
}

TEST_CASE("mean pooling makes all unrolled gradient rows equal") {
  Rng rng(13);
  const Fixture f = random_fixture(rng, 1, 3);
  const auto g = unrolled_poison_grad(f.state, f.poison, f.batch, f.adv, 0.3);
  const int d = f.poison.embed_dim;
  for (int i = 1; i < f.poison.positions; ++i)
    for (int j = 0; j < d; ++j)
      CHECK(g[static_cast<std::size_t>(i) * d + j] ==
            doctest::Approx(g[static_cast<std::size_t>(j)]).epsilon(1e-12));
}

TEST_CASE("PoisonEmbedding::from_tokens copies table rows") {
  const ModelState state = init_params({12, 4, 0, 0}, 0.2, 5);
  const std::vector<int> tokens{3, 7, 3};
  const PoisonEmbedding poison = PoisonEmbedding::from_tokens(state, tokens, 1);
  CHECK(poison.positions == 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(poison.row(i)[j] == state.embedding_row(tokens[static_cast<std::size_t>(i)])[j]);
  CHECK_THROWS_AS(PoisonEmbedding::from_tokens(state, {99}, 1), std::invalid_argument);
  CHECK_THROWS_AS(PoisonEmbedding::from_tokens(state, {}, 1), std::invalid_argument);
}

TEST_CASE("pack/unpack round-trips model parameters") {
  for (int depth : {0, 1}) {
    const ModelState state = init_params({20, 5, 4, depth}, 0.3, 8);
    const auto flat = pack(state);
    CHECK(static_cast<int>(flat.size()) == param_count(state.dims));
    const ModelState back = unpack(state.dims, flat);
    CHECK(pack(back) == flat);
  }
}
