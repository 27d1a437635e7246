#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "agrol/numerics.hpp"
#include "agrol/optimizer.hpp"
#include "agrol/random.hpp"
#include "oracles.hpp"

namespace agrol {
namespace {

using testing::dot;
using testing::finite_difference;
using testing::gather;
using testing::relative_error;

TEST(Linear, ZeroInputPassesBias) {
  Rng rng(1);
  const Tensor x(2, 3);
  const Tensor w = rng.uniform_tensor<float>(3, 2, -1, 1);
  const std::vector<float> b = {1.0f, 2.0f};
  const Tensor out = linear_forward(x, w, std::span<const float>(b));
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(out(r, 0), 1.0f);
    EXPECT_EQ(out(r, 1), 2.0f);
  }
}

TEST(Linear, IdentityInputReturnsWeights) {
  const Tensor x(2, 2, {1, 0, 0, 1});
  const Tensor w(2, 2, {1, 2, 3, 4});
  const std::vector<float> b(2, 0.0f);
  EXPECT_EQ(linear_forward(x, w, std::span<const float>(b)), w);
}

TEST(Linear, MatchesTripleLoopOracle) {
  Rng rng(7);
  const auto x = rng.uniform_tensor<float>(3, 4, -1, 1);
  const auto w = rng.uniform_tensor<float>(4, 2, -1, 1);
  const auto b = rng.uniform_tensor<float>(1, 2, -1, 1);
  const Tensor out = linear_forward(x, w, b.span());
  const auto bd = b.cast<double>();
  const auto ref = testing::naive_linear(x.cast<double>(), w.cast<double>(),
                                         std::vector<double>(bd.span().begin(), bd.span().end()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_NEAR(out.data()[i], ref.data()[i], 1e-6);
  }
}

TEST(Linear, MatchesTripleLoopOracleUpTo64) {
  Rng rng(11);
  for (const auto [n, a, b] : {std::tuple{1, 1, 1}, {5, 17, 3}, {64, 64, 64}, {33, 64, 9}}) {
    const auto x = rng.uniform_tensor<double>(n, a, -1, 1);
    const auto w = rng.uniform_tensor<double>(a, b, -1, 1);
    const auto bias = rng.uniform_tensor<double>(1, b, -1, 1);
    const auto out = linear_forward(x, w, bias.span());
    const auto ref = testing::naive_linear(
        x, w, std::vector<double>(bias.span().begin(), bias.span().end()));
    for (std::size_t i = 0; i < out.size(); ++i) {
      ASSERT_NEAR(out.data()[i], ref.data()[i], 1e-6);
    }
  }
}

TEST(Linear, ShapeMismatchThrows) {
  const Tensor x(2, 3);
  const Tensor w(4, 2);
  const std::vector<float> b(2);
  EXPECT_THROW(linear_forward(x, w, std::span<const float>(b)), DimensionError);
  const Tensor w2(3, 2);
  const std::vector<float> b3(3);
  EXPECT_THROW(linear_forward(x, w2, std::span<const float>(b3)), DimensionError);
  EXPECT_THROW(linear_backward(x, w, Tensor(2, 2)), DimensionError);
}

TEST(LinearBackward, ZeroUpstreamGivesZeroGrads) {
  Rng rng(2);
  const auto x = rng.uniform_tensor<float>(3, 4, -1, 1);
  const auto w = rng.uniform_tensor<float>(4, 5, -1, 1);
  const auto g = linear_backward(x, w, Tensor(3, 5));
  for (const float v : g.d_input.span()) EXPECT_EQ(v, 0.0f);
  for (const float v : g.d_weight.span()) EXPECT_EQ(v, 0.0f);
  for (const float v : g.d_bias.span()) EXPECT_EQ(v, 0.0f);
}

TEST(LinearBackward, ScalarChainRule) {
  const auto g = linear_backward(Tensor(1, 1, {2}), Tensor(1, 1, {3}), Tensor(1, 1, {1}));
  EXPECT_FLOAT_EQ(g.d_weight(0, 0), 2.0f);
  EXPECT_FLOAT_EQ(g.d_input(0, 0), 3.0f);
  EXPECT_FLOAT_EQ(g.d_bias(0, 0), 1.0f);
}

TEST(LinearBackward, MatchesFiniteDifferences) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = rng.uniform_tensor<double>(4, 5, -1, 1);
    auto w = rng.uniform_tensor<double>(5, 3, -1, 1);
    auto b = rng.uniform_tensor<double>(1, 3, -1, 1);
    const auto r = rng.uniform_tensor<double>(4, 3, -1, 1);
    auto loss = [&] { return dot(linear_forward(x, w, b.span()), r); };
    const auto g = linear_backward(x, w, r);
    EXPECT_LT(relative_error(finite_difference(x, loss), g.d_input.values()), 1e-4);
    EXPECT_LT(relative_error(finite_difference(w, loss), g.d_weight.values()), 1e-4);
    EXPECT_LT(relative_error(finite_difference(b, loss), g.d_bias.values()), 1e-4);
  }
}

TEST(TemporalMap, MatchesTransposedLinearAndFiniteDifferences) {
  Rng rng(4);
  auto h = rng.uniform_tensor<double>(6, 4, -1, 1);
  auto w = rng.uniform_tensor<double>(6, 6, -1, 1);
  auto b = rng.uniform_tensor<double>(6, 1, -1, 1);
  const auto out = temporal_forward(h, w, b.span());
  for (std::size_t n = 0; n < 6; ++n) {
    for (std::size_t d = 0; d < 4; ++d) {
      double acc = b(n, 0);
      for (std::size_t m = 0; m < 6; ++m) acc += w(n, m) * h(m, d);
      EXPECT_NEAR(out(n, d), acc, 1e-12);
    }
  }
  const auto r = rng.uniform_tensor<double>(6, 4, -1, 1);
  auto loss = [&] { return dot(temporal_forward(h, w, b.span()), r); };
  Tensor2<double> dw(6, 6);
  Tensor2<double> db(6, 1);
  const auto dh = temporal_backward_into(h, w, r, dw, db.span());
  EXPECT_LT(relative_error(finite_difference(h, loss), dh.values()), 1e-4);
  EXPECT_LT(relative_error(finite_difference(w, loss), dw.values()), 1e-4);
  EXPECT_LT(relative_error(finite_difference(b, loss), db.values()), 1e-4);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  const Tensor x(1, 3, {5, 5, 5});
  const std::vector<float> g(3, 1.0f);
  const std::vector<float> b(3, 0.0f);
  const Tensor out = layernorm_forward(x, std::span<const float>(g), std::span<const float>(b));
  for (const float v : out.span()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNorm, SymmetricPair) {
  const Tensor2<double> x(1, 2, {1, 3});
  const std::vector<double> g(2, 1.0);
  const std::vector<double> b(2, 0.0);
  const auto out = layernorm_forward(x, std::span<const double>(g),
                                     std::span<const double>(b), 1e-12);
  EXPECT_NEAR(out(0, 0), -1.0, 1e-9);
  EXPECT_NEAR(out(0, 1), 1.0, 1e-9);
}

TEST(LayerNorm, StandardizesRows) {
  Rng rng(5);
  const auto x = rng.uniform_tensor<float>(3, 8, -1, 1);
  const std::vector<float> g(8, 1.0f);
  const std::vector<float> b(8, 0.0f);
  const Tensor out = layernorm_forward(x, std::span<const float>(g), std::span<const float>(b));
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0;
    double var = 0;
    for (const float v : out.row(r)) mean += v;
    mean /= 8;
    for (const float v : out.row(r)) var += (v - mean) * (v - mean);
    var /= 8;
    EXPECT_LT(std::abs(mean), 1e-6);
    // eps = 1e-5 shrinks the variance by var/(var+eps).
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(LayerNormBackward, ZeroUpstream) {
  Rng rng(6);
  const auto x = rng.uniform_tensor<double>(2, 5, -1, 1);
  const std::vector<double> g(5, 1.3);
  const std::vector<double> b(5, 0.1);
  LayerNormCache<double> cache;
  layernorm_forward(x, std::span<const double>(g), std::span<const double>(b),
                    kLayerNormEps, &cache);
  const auto grads = layernorm_backward(cache, std::span<const double>(g), Tensor2<double>(2, 5));
  for (const double v : grads.d_input.span()) EXPECT_EQ(v, 0.0);
  for (const double v : grads.d_gamma.span()) EXPECT_EQ(v, 0.0);
}

// For D = 2 and eps -> 0, x_hat = (+-1) * sign(x1 - x0) is locally constant,
// so dX vanishes identically; dGamma = dOut . x_hat, dBeta = sum dOut.
TEST(LayerNormBackward, HandDerivationD2) {
  const Tensor2<double> x(1, 2, {0.5, 2.0});
  const std::vector<double> g = {2.0, -1.0};
  const std::vector<double> b = {0.0, 0.0};
  LayerNormCache<double> cache;
  layernorm_forward(x, std::span<const double>(g), std::span<const double>(b), 0.0, &cache);
  const Tensor2<double> d_out(1, 2, {0.3, 0.7});
  const auto grads = layernorm_backward(cache, std::span<const double>(g), d_out, 0.0);
  EXPECT_NEAR(grads.d_input(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(grads.d_input(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(grads.d_gamma(0, 0), -0.3, 1e-12);
  EXPECT_NEAR(grads.d_gamma(0, 1), 0.7, 1e-12);
  EXPECT_NEAR(grads.d_beta(0, 0), 0.3, 1e-12);
  EXPECT_NEAR(grads.d_beta(0, 1), 0.7, 1e-12);
}

TEST(LayerNormBackward, MatchesFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = rng.uniform_tensor<double>(3, 7, -1, 1);
    auto g = rng.uniform_tensor<double>(1, 7, -1, 1);
    auto b = rng.uniform_tensor<double>(1, 7, -1, 1);
    const auto r = rng.uniform_tensor<double>(3, 7, -1, 1);
    auto loss = [&] { return dot(layernorm_forward(x, g.span(), b.span()), r); };
    LayerNormCache<double> cache;
    layernorm_forward(x, g.span(), b.span(), kLayerNormEps, &cache);
    const auto grads = layernorm_backward(cache, g.span(), r);
    EXPECT_LT(relative_error(finite_difference(x, loss), grads.d_input.values()), 1e-4);
    EXPECT_LT(relative_error(finite_difference(g, loss), grads.d_gamma.values()), 1e-4);
    EXPECT_LT(relative_error(finite_difference(b, loss), grads.d_beta.values()), 1e-4);
  }
}

TEST(Silu, ClosedForms) {
  EXPECT_EQ(silu(0.0), 0.0);
  EXPECT_NEAR(silu(1.0), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(silu(1.0), 0.731059, 1e-6);
  EXPECT_DOUBLE_EQ(silu_grad(0.0), 0.5);
}

TEST(Silu, BackwardMatchesFiniteDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = rng.uniform_tensor<double>(4, 6, -1, 1);
    const auto r = rng.uniform_tensor<double>(4, 6, -1, 1);
    auto loss = [&] { return dot(silu(x), r); };
    EXPECT_LT(relative_error(finite_difference(x, loss), silu_backward(x, r).values()), 1e-4);
  }
}

TEST(Numerics, ForwardOpsAreDeterministic) {
  Rng rng(10);
  const auto x = rng.uniform_tensor<float>(17, 33, -1, 1);
  const auto w = rng.uniform_tensor<float>(33, 29, -1, 1);
  const auto b = rng.uniform_tensor<float>(1, 29, -1, 1);
  EXPECT_EQ(linear_forward(x, w, b.span()), linear_forward(x, w, b.span()));
  const std::vector<float> g(33, 1.0f);
  const std::vector<float> beta(33, 0.0f);
  EXPECT_EQ(layernorm_forward(x, std::span<const float>(g), std::span<const float>(beta)),
            layernorm_forward(x, std::span<const float>(g), std::span<const float>(beta)));
}

TEST(Optimizer, ZeroGradAdamLeavesParams) {
  Param<float> p("p", 2, 2);
  p.value = Tensor(2, 2, {1, -2, 3, 4});
  const Tensor before = p.value;
  auto state = make_optimizer<float>(OptimizerKind::Adam, 0.1, 0.0);
  std::vector<Param<float>*> ps = {&p};
  optimizer_step(state, ps);
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(state.step_count, 1);
}

TEST(Optimizer, FirstAdamStepMovesByLearningRate) {
  Param<double> p("p", 1, 1);
  p.value(0, 0) = 0.5;
  p.grad(0, 0) = 1.0;
  auto state = make_optimizer<double>(OptimizerKind::Adam, 0.1, 0.0);
  std::vector<Param<double>*> ps = {&p};
  optimizer_step(state, ps);
  // m_hat = v_hat = g after bias correction, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(p.value(0, 0) - 0.5, -0.1 / (1.0 + 1e-8), 1e-12);
}

TEST(Optimizer, AdamWDecaysWithoutGradient) {
  Param<double> p("p", 1, 3);
  p.value = Tensor2<double>(1, 3, {1.0, -2.0, 4.0});
  auto state = make_optimizer<double>(OptimizerKind::AdamW, 0.01, 0.1);
  std::vector<Param<double>*> ps = {&p};
  optimizer_step(state, ps);
  EXPECT_NEAR(p.value(0, 0), 0.999, 1e-12);
  EXPECT_NEAR(p.value(0, 1), -1.998, 1e-12);
  EXPECT_NEAR(p.value(0, 2), 3.996, 1e-12);
}

TEST(Optimizer, StepCountIncreases) {
  Param<float> p("p", 1, 1);
  p.grad(0, 0) = 0.25f;
  auto state = make_optimizer<float>(OptimizerKind::AdamW, 1e-3, 1e-4);
  std::vector<Param<float>*> ps = {&p};
  for (int i = 1; i <= 5; ++i) {
    optimizer_step(state, ps);
    EXPECT_EQ(state.step_count, i);
    EXPECT_TRUE(state.first_moment[0].same_shape(p.value));
  }
}

TEST(Rng, CountsDraws) {
  Rng rng(3);
  rng.normal_tensor<float>(4, 5);
  EXPECT_EQ(rng.draws(), 20u);
  rng.uniform();
  EXPECT_EQ(rng.draws(), 21u);
}

} // namespace
} // namespace agrol
