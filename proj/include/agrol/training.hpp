#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "agrol/checkpoint.hpp"
#include "agrol/diffusion.hpp"
#include "agrol/lossmetrics.hpp"
#include "agrol/optimizer.hpp"
#include "agrol/synthdata.hpp"

namespace agrol {

struct TrainConfig {
  std::size_t batch_size = 256;
  double lr_initial = 3e-4;
  double lr_after = 1e-5;
  std::size_t lr_switch_iter = 200000;
  double weight_decay = 1e-4;
  std::size_t total_iters = 250000;
  std::uint64_t seed = 0;
  std::size_t diffusion_steps = kDefaultDiffusionSteps;
  double w_pos = 0.0;
  double w_vel = 0.0;
  double w_foot = 0.0;
  bool predict_noise = false;
  TimestepMode timestep_mode = TimestepMode::RepIn;
  std::size_t num_blocks = 12;
  std::size_t latent_dim = 512;
  std::size_t seq_len = 196;
  std::size_t embed_dim = 512;
  std::size_t log_interval = 100;
  std::size_t checkpoint_interval = 0; // 0: only the final checkpoint

  [[nodiscard]] double lr_at(std::size_t iter) const {
    return iter < lr_switch_iter ? lr_initial : lr_after;
  }

  [[nodiscard]] LossWeights weights() const { return {w_pos, w_vel, w_foot}; }

  [[nodiscard]] Parameterization parameterization() const {
    return predict_noise ? Parameterization::Noise : Parameterization::CleanMotion;
  }

  [[nodiscard]] MlpConfig model_config(ModelKind kind) const {
    MlpConfig c;
    c.kind = kind;
    c.num_blocks = num_blocks;
    c.latent_dim = latent_dim;
    c.seq_len = seq_len;
    c.embed_dim = embed_dim;
    c.timestep_mode = kind == ModelKind::Predictive ? TimestepMode::None : timestep_mode;
    return c;
  }

  void validate() const {
    if (batch_size == 0 || total_iters == 0 || diffusion_steps == 0 || latent_dim == 0 ||
        embed_dim == 0 || log_interval == 0) {
      throw ConfigError("train config: counts must be positive");
    }
    if (seq_len < 2) throw ConfigError("train config: seq_len must be at least 2");
    if (!(w_pos >= 0.0 && w_vel >= 0.0 && w_foot >= 0.0)) {
      throw ConfigError("train config: loss weights must be non-negative");
    }
    if (!(lr_initial > 0.0 && lr_after > 0.0 && weight_decay >= 0.0)) {
      throw ConfigError("train config: learning rates must be positive");
    }
    if (embed_dim % 2 != 0) throw ConfigError("train config: embed_dim must be even");
  }

  bool operator==(const TrainConfig&) const = default;
};

// Desk-scale preset: N=32, D=64, M=4, batch 16, T=100.
inline TrainConfig toy_train_config() {
  TrainConfig c;
  c.batch_size = 16;
  c.num_blocks = 4;
  c.latent_dim = 64;
  c.seq_len = 32;
  c.embed_dim = 64;
  c.diffusion_steps = 100;
  c.lr_initial = 1e-3;
  c.lr_after = 1e-4;
  c.total_iters = 5000;
  c.lr_switch_iter = 4000;
  c.log_interval = 100;
  return c;
}

inline TrainConfig paper_train_config() { return TrainConfig{}; }

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  std::istringstream ss(v);
  N out{};
  if constexpr (std::is_unsigned_v<N>) {
    if (!v.empty() && v[0] == '-') {
      throw ConfigError("config key '" + key + "': expected a non-negative integer");
    }
  }
  if (!(ss >> out) || !(ss >> std::ws).eof()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  }
  return out;
}

// Reads "key = value" lines; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

} // namespace detail

// Keys match the TrainConfig field names; "preset = toy|paper" selects the
// starting values wherever it appears.
inline TrainConfig parse_train_config(std::istream& in) {
  const auto kv = detail::parse_key_values(in);
  TrainConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "preset") {
      if (v == "toy") {
        c = toy_train_config();
      } else if (v == "paper") {
        c = paper_train_config();
      } else {
        throw ConfigError("unknown preset '" + v + "'");
      }
    }
  }
  using detail::parse_number;
  for (const auto& [k, v] : kv) {
    if (k == "preset") continue;
    if (k == "batch_size") c.batch_size = parse_number<std::size_t>(k, v);
    else if (k == "lr_initial") c.lr_initial = parse_number<double>(k, v);
    else if (k == "lr_after") c.lr_after = parse_number<double>(k, v);
    else if (k == "lr_switch_iter") c.lr_switch_iter = parse_number<std::size_t>(k, v);
    else if (k == "weight_decay") c.weight_decay = parse_number<double>(k, v);
    else if (k == "total_iters") c.total_iters = parse_number<std::size_t>(k, v);
    else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "T" || k == "diffusion_steps") c.diffusion_steps = parse_number<std::size_t>(k, v);
    else if (k == "w_pos") c.w_pos = parse_number<double>(k, v);
    else if (k == "w_vel") c.w_vel = parse_number<double>(k, v);
    else if (k == "w_foot") c.w_foot = parse_number<double>(k, v);
    else if (k == "predict_noise") c.predict_noise = detail::parse_bool(k, v);
    else if (k == "timestep_mode") {
      try {
        c.timestep_mode = parse_timestep_mode(v);
      } catch (const std::exception&) {
        throw ConfigError("config key 'timestep_mode': unknown mode '" + v + "'");
      }
    }
    else if (k == "num_blocks") c.num_blocks = parse_number<std::size_t>(k, v);
    else if (k == "latent_dim") c.latent_dim = parse_number<std::size_t>(k, v);
    else if (k == "seq_len") c.seq_len = parse_number<std::size_t>(k, v);
    else if (k == "embed_dim") c.embed_dim = parse_number<std::size_t>(k, v);
    else if (k == "log_interval") c.log_interval = parse_number<std::size_t>(k, v);
    else if (k == "checkpoint_interval") c.checkpoint_interval = parse_number<std::size_t>(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return parse_train_config(in);
}

inline void write_train_config(std::ostream& out, const TrainConfig& c) {
  const auto old = out.precision(17);
  out << "batch_size = " << c.batch_size << '\n'
      << "lr_initial = " << c.lr_initial << '\n'
      << "lr_after = " << c.lr_after << '\n'
      << "lr_switch_iter = " << c.lr_switch_iter << '\n'
      << "weight_decay = " << c.weight_decay << '\n'
      << "total_iters = " << c.total_iters << '\n'
      << "seed = " << c.seed << '\n'
      << "diffusion_steps = " << c.diffusion_steps << '\n'
      << "w_pos = " << c.w_pos << '\n'
      << "w_vel = " << c.w_vel << '\n'
      << "w_foot = " << c.w_foot << '\n'
      << "predict_noise = " << (c.predict_noise ? "true" : "false") << '\n'
      << "timestep_mode = " << to_string(c.timestep_mode) << '\n'
      << "num_blocks = " << c.num_blocks << '\n'
      << "latent_dim = " << c.latent_dim << '\n'
      << "seq_len = " << c.seq_len << '\n'
      << "embed_dim = " << c.embed_dim << '\n'
      << "log_interval = " << c.log_interval << '\n'
      << "checkpoint_interval = " << c.checkpoint_interval << '\n';
  out.precision(old);
}

// ---------------------------------------------------------------------------
// Training data

// Full training clips with their sparse inputs; windows are cut per step.
struct TrainingSet {
  SkeletonTree tree;
  std::size_t seq_len = 0;
  std::vector<Tensor> motion;
  std::vector<Tensor> sparse;
  std::vector<std::vector<Vec3<double>>> root;
};

// Uses the clips listed in `indices` (all clips when empty) that hold at
// least seq_len frames.
inline TrainingSet make_training_set(const SkeletonTree& tree, const Dataset& data,
                                     std::size_t seq_len,
                                     const std::vector<std::size_t>& indices = {}) {
  TrainingSet s;
  s.tree = tree;
  s.seq_len = seq_len;
  std::vector<std::size_t> use = indices;
  if (use.empty()) {
    for (std::size_t i = 0; i < data.clips.size(); ++i) use.push_back(i);
  }
  for (const std::size_t i : use) {
    const MotionClip& c = data.clips.at(i);
    if (c.frames() < seq_len) continue;
    s.motion.push_back(c.motion);
    s.root.push_back(to_vec3(c.root));
    s.sparse.push_back(build_sparse_input(tree, c.motion, s.root.back(), c.fps));
  }
  if (s.motion.empty()) {
    throw LengthError("training set is empty: no clip has at least " +
                      std::to_string(seq_len) + " frames");
  }
  return s;
}

template <typename T>
struct TrainingWindow {
  Tensor2<T> motion;
  Tensor2<T> sparse;
  std::vector<Vec3<double>> root;
};

template <typename T>
TrainingWindow<T> draw_window(const TrainingSet& s, Rng& rng) {
  const std::size_t clip = rng.index(s.motion.size());
  const std::size_t start = rng.index(s.motion[clip].rows() - s.seq_len + 1);
  TrainingWindow<T> w;
  w.motion = slice_rows(s.motion[clip], start, s.seq_len).template cast<T>();
  w.sparse = recenter_sparse_input(slice_rows(s.sparse[clip], start, s.seq_len)).template cast<T>();
  w.root.assign(s.root[clip].begin() + static_cast<std::ptrdiff_t>(start),
                s.root[clip].begin() + static_cast<std::ptrdiff_t>(start + s.seq_len));
  return w;
}

// ---------------------------------------------------------------------------
// Losses for one example

struct StepLosses {
  double total = 0.0;
  double main = 0.0; // L_dm for diffusion, rotation MSE for the MLP
  double pos = 0.0;
  double vel = 0.0;
  double foot = 0.0;

  StepLosses& operator+=(const StepLosses& o) {
    total += o.total;
    main += o.main;
    pos += o.pos;
    vel += o.vel;
    foot += o.foot;
    return *this;
  }
  StepLosses scaled(double s) const { return {total * s, main * s, pos * s, vel * s, foot * s}; }
};

// Mean squared 6D error of the predictive MLP; accumulates grad_scale-weighted
// gradients.
template <typename T>
StepLosses mlp_example_loss(ModelParams<T>& m, const Tensor2<T>& y, const Tensor2<T>& p,
                            double grad_scale = 1.0) {
  ForwardCache<T> cache;
  const Tensor2<T> out = mlp_forward(m, p, &cache);
  if (!out.same_shape(y)) throw DimensionError("mlp_example_loss: target shape mismatch");
  const double inv_n = 1.0 / static_cast<double>(out.size());
  double loss = 0.0;
  Tensor2<T> d_out(out.rows(), out.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double diff = static_cast<double>(out.data()[i]) - y.data()[i];
    loss += diff * diff;
    d_out.data()[i] = static_cast<T>(2.0 * diff * inv_n * grad_scale);
  }
  model_backward(m, cache, d_out);
  loss *= inv_n;
  return {loss, loss, 0.0, 0.0, 0.0};
}

// L_dm plus the weighted geometric losses on x0_hat (recovered from the noise
// prediction when the network predicts noise). With all weights zero this is
// exactly training_loss_dm.
template <typename T>
StepLosses diffusion_example_loss(ModelParams<T>& m, const SkeletonTree& tree,
                                  const Tensor2<T>& x0, const Tensor2<T>& p,
                                  std::span<const Vec3<double>> root, std::size_t t,
                                  const Tensor2<T>& eps, const NoiseSchedule& sched,
                                  Parameterization param, const LossWeights& w,
                                  double grad_scale = 1.0) {
  if (!w.any()) {
    const double dm = training_loss_dm(m, x0, p, t, eps, sched, param, grad_scale);
    return {dm, dm, 0.0, 0.0, 0.0};
  }
  const Tensor2<T> x_t = q_sample(x0, t, eps, sched);
  ForwardCache<T> cache;
  const Tensor2<T> out = diffusion_forward(m, x_t, p, t, &cache);
  const bool noise = param == Parameterization::Noise;
  const Tensor2<T>& target = noise ? eps : x0;
  const double inv_n = 1.0 / static_cast<double>(out.size());
  double dm = 0.0;
  Tensor2<T> d_out(out.rows(), out.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double diff = static_cast<double>(out.data()[i]) - target.data()[i];
    dm += diff * diff;
    d_out.data()[i] = static_cast<T>(2.0 * diff * inv_n * grad_scale);
  }
  dm *= inv_n;

  const Tensor2<T> x0_hat = noise ? eps_to_x0(x_t, out, t, sched) : out;
  FootContactMask mask;
  if (w.foot > 0.0) mask = foot_contact_mask(tree, x0, root);
  Tensor2<T> d_x0(out.rows(), out.cols());
  const GeometricTerms g = geometric_losses(tree, x0, x0_hat, root,
                                            w.foot > 0.0 ? &mask : nullptr, w, &d_x0,
                                            grad_scale);
  const double chain =
      noise ? -std::sqrt(1.0 - sched.alpha_bar[t]) / std::sqrt(sched.alpha_bar[t]) : 1.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    d_out.data()[i] += static_cast<T>(chain * d_x0.data()[i]);
  }
  model_backward(m, cache, d_out);
  StepLosses s;
  s.main = dm;
  s.pos = g.pos;
  s.vel = g.vel;
  s.foot = g.foot;
  s.total = dm + w.pos * g.pos + w.vel * g.vel + w.foot * g.foot;
  return s;
}

// ---------------------------------------------------------------------------
// Training loops

struct TrainLogRecord {
  std::size_t iteration = 0; // iterations completed
  StepLosses loss;           // mean over the logging interval
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRecord> records;
};

inline void write_log_record(std::ostream& out, const TrainLogRecord& r) {
  std::ostringstream s;
  s << std::setprecision(9) << "iter=" << r.iteration << " loss=" << r.loss.total
    << " main=" << r.loss.main << " pos=" << r.loss.pos << " vel=" << r.loss.vel
    << " foot=" << r.loss.foot << " lr=" << r.lr << " wall=" << std::setprecision(4)
    << r.wall_seconds << '\n';
  out << s.str();
}

struct TrainCallbacks {
  std::function<void(const TrainLogRecord&)> on_log;
  std::function<void(const Checkpoint&)> on_checkpoint;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
  double final_loss = 0.0; // mean loss of the last iteration's batch
};

namespace detail {

// Shared loop: each iteration draws from Rng(mix_seed(seed, iteration)), so
// a resumed run repeats the draws of an uninterrupted one.
template <typename ExampleLoss>
TrainResult run_training(const TrainingSet& data, const TrainConfig& cfg, ModelKind kind,
                         const Checkpoint* resume, const TrainCallbacks& callbacks,
                         ExampleLoss&& example_loss) {
  cfg.validate();
  if (data.motion.empty()) throw LengthError("training set is empty");
  if (data.seq_len != cfg.seq_len) {
    throw ConfigError("training set windows do not match seq_len");
  }
  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  const MlpConfig mc = cfg.model_config(kind);
  const OptimizerKind okind =
      kind == ModelKind::Diffusion ? OptimizerKind::AdamW : OptimizerKind::Adam;
  if (resume != nullptr) {
    if (!(resume->model.config == mc)) {
      throw ConfigError("resume checkpoint does not match the configured model");
    }
    ck = *resume;
    if (!ck.optimizer) ck.optimizer = make_optimizer<float>(okind, cfg.lr_initial, cfg.weight_decay);
  } else {
    ck.model = make_params<float>(mc);
    init_params(ck.model, mix_seed(cfg.seed, 0x1a1));
    ck.optimizer = make_optimizer<float>(okind, cfg.lr_initial, cfg.weight_decay);
  }
  ck.predict_noise = kind == ModelKind::Diffusion && cfg.predict_noise;
  ck.diffusion_steps = kind == ModelKind::Diffusion ? cfg.diffusion_steps : 0;
  ck.optimizer->weight_decay = cfg.weight_decay;

  auto params = ck.model.parameters();
  const double scale = 1.0 / static_cast<double>(cfg.batch_size);
  const auto start = std::chrono::steady_clock::now();
  StepLosses interval;
  std::size_t interval_count = 0;
  for (std::size_t iter = ck.iteration; iter < cfg.total_iters; ++iter) {
    Rng rng(mix_seed(cfg.seed, 0x7000000 + iter));
    ck.model.zero_grad();
    StepLosses batch;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      batch += example_loss(ck.model, rng, scale);
    }
    batch = batch.scaled(scale);
    if (!std::isfinite(batch.total)) {
      throw std::runtime_error("training loss became non-finite at iteration " +
                               std::to_string(iter));
    }
    ck.optimizer->lr = cfg.lr_at(iter);
    optimizer_step(*ck.optimizer, params);
    ck.iteration = iter + 1;
    result.final_loss = batch.total;
    interval += batch;
    ++interval_count;
    if (ck.iteration % cfg.log_interval == 0 || ck.iteration == cfg.total_iters) {
      TrainLogRecord r;
      r.iteration = ck.iteration;
      r.loss = interval.scaled(1.0 / static_cast<double>(interval_count));
      r.lr = cfg.lr_at(iter);
      r.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.log.records.push_back(r);
      if (callbacks.on_log) callbacks.on_log(r);
      interval = {};
      interval_count = 0;
    }
    if (cfg.checkpoint_interval > 0 && ck.iteration % cfg.checkpoint_interval == 0 &&
        callbacks.on_checkpoint) {
      callbacks.on_checkpoint(ck);
    }
  }
  return result;
}

} // namespace detail

inline TrainResult train_mlp(const TrainingSet& data, const TrainConfig& cfg,
                             const Checkpoint* resume = nullptr,
                             const TrainCallbacks& callbacks = {}) {
  return detail::run_training(
      data, cfg, ModelKind::Predictive, resume, callbacks,
      [&](ModelParams<float>& m, Rng& rng, double scale) {
        const auto w = draw_window<float>(data, rng);
        return mlp_example_loss(m, w.motion, w.sparse, scale);
      });
}

inline TrainResult train_diffusion(const TrainingSet& data, const TrainConfig& cfg,
                                   const Checkpoint* resume = nullptr,
                                   const TrainCallbacks& callbacks = {}) {
  const NoiseSchedule sched = cosine_schedule(cfg.diffusion_steps);
  const LossWeights weights = cfg.weights();
  const Parameterization param = cfg.parameterization();
  return detail::run_training(
      data, cfg, ModelKind::Diffusion, resume, callbacks,
      [&](ModelParams<float>& m, Rng& rng, double scale) {
        const auto w = draw_window<float>(data, rng);
        const std::size_t t = rng.index(cfg.diffusion_steps);
        const Tensor eps = rng.normal_tensor<float>(w.motion.rows(), w.motion.cols());
        return diffusion_example_loss(m, data.tree, w.motion, w.sparse, w.root, t, eps, sched,
                                      param, weights, scale);
      });
}

} // namespace agrol
