#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "agrol/network.hpp"
#include "oracles.hpp"

namespace agrol {
namespace {

using testing::dot;
using testing::finite_difference;
using testing::gather;
using testing::relative_error;

MlpConfig tiny(ModelKind kind, TimestepMode mode) {
  MlpConfig c;
  c.kind = kind;
  c.timestep_mode = kind == ModelKind::Predictive ? TimestepMode::None : mode;
  c.num_blocks = 2;
  c.latent_dim = 16;
  c.seq_len = 8;
  c.in_dim = 5;
  c.out_dim = 12;
  c.embed_dim = 8;
  return c;
}

// Randomizes every parameter, including the output projection and the
// LayerNorm affine terms, so no gradient path is trivially zero.
template <typename T>
void randomize(ModelParams<T>& m, std::uint64_t seed) {
  Rng rng(seed);
  m.visit([&](Param<T>& p) {
    for (T& v : p.value.span()) v = static_cast<T>(rng.uniform(-0.6, 0.6));
  });
  for (auto& b : m.blocks) {
    for (T& v : b.norm1.gamma.value.span()) v += T(1);
    for (T& v : b.norm2.gamma.value.span()) v += T(1);
  }
}

TEST(TimestepEmbedding, ClosedForms) {
  const auto e0 = timestep_embed<double>(0, 8);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(e0(0, i), i % 2 == 0 ? 0.0 : 1.0);
  const auto e1 = timestep_embed<double>(1, 2);
  EXPECT_NEAR(e1(0, 0), 0.84147, 1e-5);
  EXPECT_NEAR(e1(0, 1), 0.54030, 1e-5);
  EXPECT_THROW(timestep_embed<double>(3, 7), DimensionError);
}

TEST(TimestepEmbedding, DistinctAcrossSchedule) {
  std::vector<Tensor> embs;
  for (std::size_t t = 0; t < 1000; ++t) embs.push_back(timestep_embed<float>(t, 512));
  for (std::size_t a = 0; a < 1000; ++a)
    for (std::size_t b = a + 1; b < 1000; ++b) ASSERT_NE(embs[a], embs[b]) << a << " " << b;
}

TEST(Block, ZeroWeightsArePureSkip) {
  auto m = make_params<double>(tiny(ModelKind::Predictive, TimestepMode::None));
  Rng rng(1);
  const auto h = rng.uniform_tensor<double>(8, 16, -1, 1);
  EXPECT_EQ(mlp_block_forward(m.blocks[0], h, std::nullopt), h);
  const auto v = rng.uniform_tensor<double>(1, 16, -1, 1);
  const auto out = mlp_block_forward(m.blocks[0], h, std::optional<std::span<const double>>(v.span()));
  for (std::size_t n = 0; n < 8; ++n)
    for (std::size_t d = 0; d < 16; ++d) EXPECT_DOUBLE_EQ(out(n, d), h(n, d) + v(0, d));
  EXPECT_THROW(mlp_block_forward(m.blocks[0], Tensor2<double>(7, 16), std::nullopt),
               DimensionError);
}

TEST(Block, BackwardMatchesFiniteDifferences) {
  auto m = make_params<double>(tiny(ModelKind::Diffusion, TimestepMode::RepIn));
  randomize(m, 2);
  BlockParams<double>& b = m.blocks[0];
  Rng rng(3);
  auto h = rng.uniform_tensor<double>(8, 16, -1, 1);
  auto u = rng.uniform_tensor<double>(1, 16, -1, 1);
  const auto r = rng.uniform_tensor<double>(8, 16, -1, 1);
  auto loss = [&] {
    return dot(mlp_block_forward(b, h, std::optional<std::span<const double>>(u.span())), r);
  };
  BlockCache<double> cache;
  mlp_block_forward(b, h, std::optional<std::span<const double>>(u.span()), &cache);
  Tensor2<double> du(1, 16);
  const auto dh = mlp_block_backward(b, cache, r, du.span());
  EXPECT_LT(relative_error(finite_difference(h, loss, 1e-5), dh.values()), 1e-4);
  EXPECT_LT(relative_error(finite_difference(u, loss, 1e-5), du.values()), 1e-4);
  for (Param<double>* p : {&b.norm1.gamma, &b.norm1.beta, &b.temporal_weight, &b.temporal_bias,
                           &b.norm2.gamma, &b.norm2.beta, &b.feature.weight, &b.feature.bias}) {
    EXPECT_LT(relative_error(finite_difference(p->value, loss, 1e-5), p->grad.values()), 1e-4)
        << p->name;
  }
}

struct EndToEnd : ::testing::TestWithParam<std::pair<ModelKind, TimestepMode>> {};

TEST_P(EndToEnd, GradientsMatchFiniteDifferences) {
  const auto [kind, mode] = GetParam();
  const MlpConfig cfg = tiny(kind, mode);
  auto m = make_params<double>(cfg);
  randomize(m, 4);
  Rng rng(5);
  const auto x = rng.uniform_tensor<double>(cfg.seq_len, cfg.out_dim, -1, 1);
  const auto p = rng.uniform_tensor<double>(cfg.seq_len, cfg.in_dim, -1, 1);
  const auto r = rng.uniform_tensor<double>(cfg.seq_len, cfg.out_dim, -1, 1);
  const std::size_t t = 37;
  auto run = [&](ForwardCache<double>* cache) {
    return kind == ModelKind::Predictive ? mlp_forward(m, p, cache)
                                         : diffusion_forward(m, x, p, t, cache);
  };
  auto loss = [&] { return dot(run(nullptr), r); };
  ForwardCache<double> cache;
  run(&cache);
  m.zero_grad();
  model_backward(m, cache, r);
  for (Param<double>* param : m.parameters()) {
    std::vector<std::size_t> picked;
    const auto fd = finite_difference(param->value, loss, 1e-5, 24, &picked);
    EXPECT_LT(relative_error(fd, gather(param->grad, picked)), 1e-4) << param->name;
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllModes, EndToEnd,
    ::testing::Values(std::pair{ModelKind::Predictive, TimestepMode::None},
                      std::pair{ModelKind::Diffusion, TimestepMode::None},
                      std::pair{ModelKind::Diffusion, TimestepMode::Add},
                      std::pair{ModelKind::Diffusion, TimestepMode::Concat},
                      std::pair{ModelKind::Diffusion, TimestepMode::RepIn}),
    [](const auto& info) {
      return std::string(to_string(info.param.first)) + "_" +
             std::string(to_string(info.param.second));
    });

TEST(Network, NoBlocksComposesProjections) {
  MlpConfig cfg = tiny(ModelKind::Predictive, TimestepMode::None);
  cfg.num_blocks = 0;
  auto m = make_params<double>(cfg);
  randomize(m, 6);
  Rng rng(7);
  const auto p = rng.uniform_tensor<double>(8, 5, -1, 1);
  const auto hidden = linear_forward(p, m.input_proj.weight.value, m.input_proj.bias.value.span());
  const auto expected =
      linear_forward(hidden, m.output_proj.weight.value, m.output_proj.bias.value.span());
  EXPECT_EQ(mlp_forward(m, p), expected);
}

TEST(Network, ZeroOutputProjectionGivesZeroOutput) {
  auto m = make_params<float>(tiny(ModelKind::Predictive, TimestepMode::None));
  init_params(m, 8, OutputInit::Zero);
  Rng rng(9);
  for (int i = 0; i < 3; ++i) {
    const auto out = mlp_forward(m, rng.uniform_tensor<float>(8, 5, -3, 3));
    for (const float v : out.span()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(Network, IdentityOutputInitDecodesToIdentity) {
  auto cfg = tiny(ModelKind::Diffusion, TimestepMode::RepIn);
  auto m = make_params<float>(cfg);
  init_params(m, 8);
  Rng rng(10);
  const auto out = diffusion_forward(m, rng.normal_tensor<float>(8, 12), rng.normal_tensor<float>(8, 5), 3);
  for (std::size_t n = 0; n < 8; ++n)
    for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(out(n, k), identity_rot6d<float>()[k % 6]);
}

TEST(Network, ZeroTimestepProjectionsMatchNoneMode) {
  auto rep = make_params<float>(tiny(ModelKind::Diffusion, TimestepMode::RepIn));
  init_params(rep, 11);
  randomize(rep, 11);
  for (auto& b : rep.blocks) {
    b.time_proj->weight.value.fill(0.0f);
    b.time_proj->bias.value.fill(0.0f);
  }
  auto none = make_params<float>(tiny(ModelKind::Diffusion, TimestepMode::None));
  std::map<std::string, Tensor> by_name;
  rep.visit([&](const Param<float>& p) { by_name[p.name] = p.value; });
  none.visit([&](Param<float>& p) { p.value = by_name.at(p.name); });
  Rng rng(12);
  const auto x = rng.normal_tensor<float>(8, 12);
  const auto p = rng.normal_tensor<float>(8, 5);
  EXPECT_EQ(diffusion_forward(rep, x, p, 500), diffusion_forward(none, x, p, 500));
}

TEST(Network, TimestepReachesOutput) {
  for (const auto mode : {TimestepMode::Add, TimestepMode::Concat, TimestepMode::RepIn}) {
    auto m = make_params<float>(tiny(ModelKind::Diffusion, mode));
    randomize(m, 13);
    Rng rng(14);
    const auto x = rng.normal_tensor<float>(8, 12);
    const auto p = rng.normal_tensor<float>(8, 5);
    EXPECT_NE(diffusion_forward(m, x, p, 10), diffusion_forward(m, x, p, 900)) << to_string(mode);
  }
  auto none = make_params<float>(tiny(ModelKind::Diffusion, TimestepMode::None));
  randomize(none, 13);
  Rng rng(14);
  const auto x = rng.normal_tensor<float>(8, 12);
  const auto p = rng.normal_tensor<float>(8, 5);
  EXPECT_EQ(diffusion_forward(none, x, p, 10), diffusion_forward(none, x, p, 900));
}

TEST(Network, ShapeAndKindErrors) {
  auto d = make_params<float>(tiny(ModelKind::Diffusion, TimestepMode::RepIn));
  EXPECT_THROW(diffusion_forward(d, Tensor(8, 11), Tensor(8, 5), 0), DimensionError);
  EXPECT_THROW(diffusion_forward(d, Tensor(7, 12), Tensor(7, 5), 0), DimensionError);
  EXPECT_THROW(mlp_forward(d, Tensor(8, 5)), ConfigError);
  auto p = make_params<float>(tiny(ModelKind::Predictive, TimestepMode::None));
  EXPECT_THROW(mlp_forward(p, Tensor(8, 6)), DimensionError);
  MlpConfig bad = tiny(ModelKind::Diffusion, TimestepMode::RepIn);
  bad.embed_dim = 7;
  EXPECT_THROW(make_params<float>(bad), ConfigError);
  EXPECT_THROW(parse_timestep_mode("sum"), ConfigError);
  EXPECT_EQ(parse_timestep_mode("concat"), TimestepMode::Concat);
}

TEST(Network, ParameterCountAtDefaultScale) {
  const auto m = make_params<float>(paper_diffusion_config());
  EXPECT_EQ(m.parameter_count(), 7'480'436u);
  EXPECT_NEAR(static_cast<double>(m.parameter_count()) / 7.48e6, 1.0, 0.05);
  std::set<std::string> names;
  m.visit([&](const Param<float>& p) {
    EXPECT_TRUE(p.grad.same_shape(p.value)) << p.name;
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
  });
  const auto concat = make_params<float>(paper_diffusion_config(TimestepMode::Concat));
  EXPECT_EQ(concat.blocks[0].temporal_weight.value.rows(), 197u);
}

TEST(Network, DeterministicAndFiniteForAllTimesteps) {
  auto m = make_params<float>(tiny(ModelKind::Diffusion, TimestepMode::RepIn));
  init_params(m, 15);
  randomize(m, 15);
  Rng rng(16);
  const auto x = rng.normal_tensor<float>(8, 12);
  const auto p = rng.normal_tensor<float>(8, 5);
  for (std::size_t t = 0; t < 1000; t += 37) {
    const auto a = diffusion_forward(m, x, p, t);
    EXPECT_EQ(a, diffusion_forward(m, x, p, t));
    for (const float v : a.span()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Network, CastPreservesValues) {
  auto m = make_params<float>(tiny(ModelKind::Diffusion, TimestepMode::Concat));
  init_params(m, 17);
  const auto d = m.cast<double>();
  EXPECT_EQ(d.parameter_count(), m.parameter_count());
  EXPECT_EQ(d.output_proj.bias.value.cast<float>(), m.output_proj.bias.value);
  EXPECT_EQ(d.blocks[1].temporal_weight.value.cast<float>(), m.blocks[1].temporal_weight.value);
}

} // namespace
} // namespace agrol
