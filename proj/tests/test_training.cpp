#include <sstream>

#include <gtest/gtest.h>

#include "agrol/training.hpp"
#include "oracles.hpp"

namespace agrol {
namespace {

Dataset small_dataset(std::size_t count, std::size_t frames, std::uint64_t seed) {
  GaitRanges r;
  r.lo.frames = r.hi.frames = frames;
  return make_dataset(default_test_skeleton(), count, r, seed);
}

TrainConfig quick_config() {
  TrainConfig c = toy_train_config();
  c.batch_size = 4;
  c.num_blocks = 2;
  c.latent_dim = 16;
  c.embed_dim = 8;
  c.seq_len = 16;
  c.diffusion_steps = 50;
  c.total_iters = 12;
  c.lr_switch_iter = 8;
  c.log_interval = 4;
  c.seed = 5;
  return c;
}

std::string checkpoint_bytes(const Checkpoint& ck) {
  std::ostringstream out;
  write_checkpoint(out, ck);
  return out.str();
}

TEST(TrainConfig, LearningRateStepRule) {
  const TrainConfig c = paper_train_config();
  EXPECT_EQ(c.lr_at(0), 3e-4);
  EXPECT_EQ(c.lr_at(199999), 3e-4);
  EXPECT_EQ(c.lr_at(200000), 1e-5);
  EXPECT_EQ(c.lr_at(10000000), 1e-5);
  EXPECT_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.batch_size, 256u);
  EXPECT_EQ(c.diffusion_steps, 1000u);
}

TEST(TrainConfig, ToyPreset) {
  const TrainConfig c = toy_train_config();
  EXPECT_EQ(c.seq_len, 32u);
  EXPECT_EQ(c.latent_dim, 64u);
  EXPECT_EQ(c.num_blocks, 4u);
  EXPECT_EQ(c.batch_size, 16u);
  EXPECT_EQ(c.diffusion_steps, 100u);
}

TEST(TrainConfig, TextRoundTrip) {
  TrainConfig c = quick_config();
  c.w_pos = 1.0;
  c.w_foot = 0.5;
  c.predict_noise = true;
  c.timestep_mode = TimestepMode::Concat;
  c.lr_initial = 1.0 / 3.0;
  std::stringstream s;
  write_train_config(s, c);
  EXPECT_EQ(parse_train_config(s), c);
}

TEST(TrainConfig, PresetThenOverrides) {
  std::istringstream in("total_iters = 7  # short\npreset = toy\n\nw_vel=1\n");
  const TrainConfig c = parse_train_config(in);
  EXPECT_EQ(c.seq_len, 32u);
  EXPECT_EQ(c.total_iters, 7u);
  EXPECT_EQ(c.w_vel, 1.0);
}

TEST(TrainConfig, Rejects) {
  for (const char* text : {"unknown = 1\n", "w_pos = -1\n", "batch_size = 0\n",
                           "batch_size = -3\n", "timestep_mode = sideways\n", "seed\n",
                           "lr_initial = fast\n", "predict_noise = maybe\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(parse_train_config(in), ConfigError) << text;
  }
}

TEST(TrainingSet, SkipsShortClipsAndRejectsEmpty) {
  const auto tree = default_test_skeleton();
  const Dataset d = small_dataset(3, 20, 1);
  EXPECT_EQ(make_training_set(tree, d, 16).motion.size(), 3u);
  EXPECT_THROW(make_training_set(tree, d, 32), LengthError);
  EXPECT_EQ(make_training_set(tree, d, 16, {1}).motion.size(), 1u);
}

TEST(TrainingSet, WindowsAreRecentered) {
  const auto tree = default_test_skeleton();
  const TrainingSet s = make_training_set(tree, small_dataset(2, 60, 2), 16);
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    const auto w = draw_window<float>(s, rng);
    EXPECT_EQ(w.motion.rows(), 16u);
    EXPECT_EQ(w.root.size(), 16u);
    EXPECT_EQ(w.sparse(0, sparse_field::kPosition + 0), 0.0f);
    EXPECT_EQ(w.sparse(0, sparse_field::kPosition + 2), 0.0f);
  }
}

TEST(TrainMlp, OverfitsOneSequence) {
  const auto tree = default_test_skeleton();
  const TrainingSet s = make_training_set(tree, small_dataset(2, 32, 3), 32, {0});
  TrainConfig c = toy_train_config();
  c.total_iters = 500;
  c.lr_switch_iter = 400;
  c.log_interval = 1;
  const TrainResult r = train_mlp(s, c);
  ASSERT_EQ(r.log.records.size(), 500u);
  const double initial = r.log.records.front().loss.total;
  EXPECT_LT(r.final_loss, 0.01 * initial) << initial;
  for (const auto& rec : r.log.records) EXPECT_TRUE(std::isfinite(rec.loss.total));
}

TEST(TrainMlp, SameSeedIsBitwiseIdentical) {
  const auto tree = default_test_skeleton();
  const TrainingSet s = make_training_set(tree, small_dataset(3, 24, 4), 16);
  const TrainResult a = train_mlp(s, quick_config());
  const TrainResult b = train_mlp(s, quick_config());
  EXPECT_EQ(a.final_loss, b.final_loss);
  EXPECT_EQ(checkpoint_bytes(a.checkpoint), checkpoint_bytes(b.checkpoint));
  TrainConfig other = quick_config();
  other.seed = 6;
  EXPECT_NE(train_mlp(s, other).final_loss, a.final_loss);
}

TEST(TrainDiffusion, SameSeedIsBitwiseIdentical) {
  const auto tree = default_test_skeleton();
  const TrainingSet s = make_training_set(tree, small_dataset(3, 24, 4), 16);
  TrainConfig c = quick_config();
  c.w_pos = c.w_vel = c.w_foot = 1.0;
  const TrainResult a = train_diffusion(s, c);
  const TrainResult b = train_diffusion(s, c);
  EXPECT_EQ(a.final_loss, b.final_loss);
  EXPECT_EQ(checkpoint_bytes(a.checkpoint), checkpoint_bytes(b.checkpoint));
}

TEST(TrainDiffusion, LogIsIncreasingAndFinite) {
  const auto tree = default_test_skeleton();
  const TrainingSet s = make_training_set(tree, small_dataset(3, 24, 4), 16);
  TrainConfig c = quick_config();
  c.w_pos = c.w_vel = c.w_foot = 1.0;
  const TrainResult r = train_diffusion(s, c);
  ASSERT_EQ(r.log.records.size(), 3u);
  for (std::size_t i = 0; i < r.log.records.size(); ++i) {
    EXPECT_EQ(r.log.records[i].iteration, 4 * (i + 1));
    EXPECT_TRUE(std::isfinite(r.log.records[i].loss.total));
    EXPECT_GT(r.log.records[i].loss.pos, 0.0);
  }
  EXPECT_EQ(r.log.records[0].lr, c.lr_initial);
  EXPECT_EQ(r.log.records[2].lr, c.lr_after);
  EXPECT_EQ(r.checkpoint.iteration, 12u);
  EXPECT_EQ(r.checkpoint.optimizer->kind, OptimizerKind::AdamW);
}

TEST(TrainDiffusion, ResumeMatchesUninterruptedRun) {
  const auto tree = default_test_skeleton();
  const TrainingSet s = make_training_set(tree, small_dataset(3, 24, 4), 16);
  const TrainConfig full = quick_config();
  TrainConfig half = full;
  half.total_iters = 6;
  const TrainResult first = train_diffusion(s, half);
  std::stringstream bytes;
  write_checkpoint(bytes, first.checkpoint);
  const Checkpoint saved = read_checkpoint(bytes);
  const TrainResult resumed = train_diffusion(s, full, &saved);
  const TrainResult straight = train_diffusion(s, full);
  EXPECT_EQ(resumed.checkpoint.iteration, 12u);
  EXPECT_EQ(checkpoint_bytes(resumed.checkpoint), checkpoint_bytes(straight.checkpoint));
}

TEST(TrainDiffusion, CheckpointCallbackFiresAtInterval) {
  const auto tree = default_test_skeleton();
  const TrainingSet s = make_training_set(tree, small_dataset(2, 24, 4), 16);
  TrainConfig c = quick_config();
  c.checkpoint_interval = 5;
  std::vector<std::uint64_t> seen;
  TrainCallbacks cb;
  cb.on_checkpoint = [&](const Checkpoint& ck) { seen.push_back(ck.iteration); };
  train_diffusion(s, c, nullptr, cb);
  EXPECT_EQ(seen, (std::vector<std::uint64_t>{5, 10}));
}

// With every geometric weight at zero the loop must be plain L_dm training:
// replay it by hand with training_loss_dm and compare bitwise.
TEST(TrainDiffusion, ZeroWeightsArePureDenoisingLoss) {
  const auto tree = default_test_skeleton();
  const TrainingSet s = make_training_set(tree, small_dataset(3, 24, 4), 16);
  const TrainConfig c = quick_config();
  const TrainResult r = train_diffusion(s, c);

  ModelParams<float> m = make_params<float>(c.model_config(ModelKind::Diffusion));
  init_params(m, mix_seed(c.seed, 0x1a1));
  auto opt = make_optimizer<float>(OptimizerKind::AdamW, c.lr_initial, c.weight_decay);
  const auto sched = cosine_schedule(c.diffusion_steps);
  double last = 0.0;
  for (std::size_t iter = 0; iter < c.total_iters; ++iter) {
    Rng rng(mix_seed(c.seed, 0x7000000 + iter));
    m.zero_grad();
    double sum = 0.0;
    for (std::size_t b = 0; b < c.batch_size; ++b) {
      const auto w = draw_window<float>(s, rng);
      const std::size_t t = rng.index(c.diffusion_steps);
      const Tensor eps = rng.normal_tensor<float>(w.motion.rows(), w.motion.cols());
      sum += training_loss_dm(m, w.motion, w.sparse, t, eps, sched,
                              Parameterization::CleanMotion, 1.0 / c.batch_size);
    }
    last = sum * (1.0 / c.batch_size);
    opt.lr = c.lr_at(iter);
    optimizer_step(opt, m.parameters());
  }
  EXPECT_EQ(r.final_loss, last);
  Checkpoint manual = r.checkpoint;
  manual.model = m;
  manual.optimizer = opt;
  EXPECT_EQ(checkpoint_bytes(manual), checkpoint_bytes(r.checkpoint));
}

TEST(DiffusionExampleLoss, ZeroWeightsMatchDenoisingLossAndGradients) {
  const auto tree = default_test_skeleton();
  const TrainingSet s = make_training_set(tree, small_dataset(2, 24, 7), 16);
  const TrainConfig c = quick_config();
  auto a = make_params<float>(c.model_config(ModelKind::Diffusion));
  init_params(a, 3);
  auto b = a;
  Rng rng(2);
  const auto w = draw_window<float>(s, rng);
  const Tensor eps = rng.normal_tensor<float>(16, kMotionWidth);
  const auto sched = cosine_schedule(50);
  for (const auto param : {Parameterization::CleanMotion, Parameterization::Noise}) {
    a.zero_grad();
    b.zero_grad();
    const StepLosses l = diffusion_example_loss(a, tree, w.motion, w.sparse, w.root, 17, eps,
                                                sched, param, LossWeights{}, 0.25);
    const double dm = training_loss_dm(b, w.motion, w.sparse, 17, eps, sched, param, 0.25);
    EXPECT_EQ(l.total, dm);
    auto pa = a.parameters();
    auto pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->grad, pb[i]->grad);
  }
}

// Gradient of L_dm + L_pos + L_vel + L_foot through the full model, for both
// output parameterizations.
class GeometricGradient : public ::testing::TestWithParam<Parameterization> {};

TEST_P(GeometricGradient, MatchesFiniteDifferences) {
  const auto tree = default_test_skeleton();
  MlpConfig cfg;
  cfg.kind = ModelKind::Diffusion;
  cfg.timestep_mode = TimestepMode::RepIn;
  cfg.num_blocks = 1;
  cfg.latent_dim = 6;
  cfg.seq_len = 4;
  cfg.embed_dim = 4;
  auto m = make_params<double>(cfg);
  init_params(m, 4);
  Rng rng(12);
  m.visit([&](Param<double>& q) {
    for (auto& v : q.value.span()) v += rng.uniform(-0.2, 0.2);
  });
  GaitParams g;
  g.frames = 4;
  g.speed = 0.0;
  g.stride_amplitude = 0.0;
  g.arm_swing = 0.0;
  g.noise_deg = 0.0;
  const MotionClip clip = generate_gait(tree, g, 1);
  // Hold both feet still for the first two frames so the contact mask is
  // active, then perturb the rotations.
  Tensor2<double> x0 = clip.motion.cast<double>();
  for (std::size_t f = 2; f < 4; ++f)
    for (std::size_t i = 0; i < kMotionWidth; ++i) x0(f, i) += rng.uniform(-0.2, 0.2);
  const auto root = to_vec3(clip.root);
  const auto p = rng.uniform_tensor<double>(4, kSparseWidth, -1, 1);
  const auto eps = rng.normal_tensor<double>(4, kMotionWidth);
  const auto sched = cosine_schedule(100);
  const LossWeights w{1.0, 1.0, 1.0};
  const Parameterization param = GetParam();
  const std::size_t t = 40;

  ASSERT_GT(foot_contact_mask(tree, x0, root).active(), 0u);
  m.zero_grad();
  const StepLosses l = diffusion_example_loss(m, tree, x0, p, root, t, eps, sched, param, w);
  EXPECT_GT(l.pos, 0.0);
  EXPECT_GT(l.vel, 0.0);
  EXPECT_GT(l.foot, 0.0);
  auto loss = [&] {
    return diffusion_example_loss(m, tree, x0, p, root, t, eps, sched, param, w, 0.0).total;
  };
  for (Param<double>* q : m.parameters()) {
    const Tensor2<double> grad = q->grad;
    std::vector<std::size_t> picked;
    const auto fd = testing::finite_difference(q->value, loss, 1e-6, 12, &picked);
    EXPECT_LT(testing::relative_error(fd, testing::gather(grad, picked)), 1e-5) << q->name;
  }
}

INSTANTIATE_TEST_SUITE_P(BothTargets, GeometricGradient,
                         ::testing::Values(Parameterization::CleanMotion,
                                           Parameterization::Noise));

TEST(MlpExampleLoss, GradientMatchesFiniteDifferences) {
  MlpConfig cfg;
  cfg.kind = ModelKind::Predictive;
  cfg.timestep_mode = TimestepMode::None;
  cfg.num_blocks = 2;
  cfg.latent_dim = 6;
  cfg.seq_len = 5;
  cfg.in_dim = 7;
  cfg.out_dim = 12;
  auto m = make_params<double>(cfg);
  init_params(m, 5);
  Rng rng(13);
  m.visit([&](Param<double>& q) {
    for (auto& v : q.value.span()) v += rng.uniform(-0.2, 0.2);
  });
  const auto y = rng.uniform_tensor<double>(5, 12, -1, 1);
  const auto p = rng.uniform_tensor<double>(5, 7, -1, 1);
  m.zero_grad();
  mlp_example_loss(m, y, p);
  auto loss = [&] { return mlp_example_loss(m, y, p, 0.0).total; };
  for (Param<double>* q : m.parameters()) {
    const Tensor2<double> grad = q->grad;
    std::vector<std::size_t> picked;
    const auto fd = testing::finite_difference(q->value, loss, 1e-6, 12, &picked);
    EXPECT_LT(testing::relative_error(fd, testing::gather(grad, picked)), 1e-5) << q->name;
  }
}

} // namespace
} // namespace agrol
