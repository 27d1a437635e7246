#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agrol/errors.hpp"
#include "agrol/features.hpp"
#include "agrol/numerics.hpp"
#include "agrol/random.hpp"

namespace agrol {

// Predictive: sparse input -> motion in one pass.
// Diffusion: (noisy motion, sparse input, t) -> clean motion estimate.
enum class ModelKind : std::uint32_t { Predictive = 0, Diffusion = 1 };

// How the diffusion step t reaches the network.
enum class TimestepMode : std::uint32_t { None = 0, Add = 1, Concat = 2, RepIn = 3 };

inline std::string_view to_string(TimestepMode m) {
  switch (m) {
    case TimestepMode::None: return "none";
    case TimestepMode::Add: return "add";
    case TimestepMode::Concat: return "concat";
    case TimestepMode::RepIn: return "repin";
  }
  return "?";
}

inline TimestepMode parse_timestep_mode(std::string_view s) {
  if (s == "none") return TimestepMode::None;
  if (s == "add") return TimestepMode::Add;
  if (s == "concat") return TimestepMode::Concat;
  if (s == "repin") return TimestepMode::RepIn;
  throw ConfigError("unknown timestep mode '" + std::string(s) +
                    "' (expected none|add|concat|repin)");
}

inline std::string_view to_string(ModelKind k) {
  return k == ModelKind::Predictive ? "mlp" : "diffusion";
}

struct MlpConfig {
  ModelKind kind = ModelKind::Diffusion;
  std::size_t num_blocks = 12;
  std::size_t latent_dim = 512;
  std::size_t seq_len = 196;
  std::size_t in_dim = kSparseWidth;  // conditioning (sparse input) width
  std::size_t out_dim = kMotionWidth; // motion width
  std::size_t embed_dim = 512;
  TimestepMode timestep_mode = TimestepMode::RepIn;

  // Rows seen by the temporal maps: one extra row carries the timestep in
  // Concat mode.
  [[nodiscard]] std::size_t token_count() const {
    return seq_len + (timestep_mode == TimestepMode::Concat ? 1 : 0);
  }

  [[nodiscard]] bool uses_timestep() const {
    return kind == ModelKind::Diffusion && timestep_mode != TimestepMode::None;
  }

  void validate() const {
    if (latent_dim == 0 || seq_len == 0 || in_dim == 0 || out_dim == 0 ||
        embed_dim == 0) {
      throw ConfigError("MlpConfig: all dimensions must be >= 1");
    }
    if (embed_dim % 2 != 0) {
      throw ConfigError("MlpConfig: embed_dim must be even");
    }
    if (kind == ModelKind::Predictive && timestep_mode != TimestepMode::None) {
      throw ConfigError("MlpConfig: the predictive MLP takes no timestep");
    }
  }

  bool operator==(const MlpConfig&) const = default;
};

// Defaults used for the paper-scale networks (N=196, D=512, M=12).
inline MlpConfig paper_diffusion_config(TimestepMode mode = TimestepMode::RepIn) {
  MlpConfig c;
  c.timestep_mode = mode;
  return c;
}

inline MlpConfig paper_mlp_config() {
  MlpConfig c;
  c.kind = ModelKind::Predictive;
  c.timestep_mode = TimestepMode::None;
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
struct LinearParams {
  Param<T> weight; // in x out
  Param<T> bias;   // 1 x out

  LinearParams() = default;
  LinearParams(const std::string& name, std::size_t in, std::size_t out)
      : weight(name + ".weight", in, out), bias(name + ".bias", 1, out) {}
};

template <typename T>
struct NormParams {
  Param<T> gamma;
  Param<T> beta;

  NormParams() = default;
  NormParams(const std::string& name, std::size_t d)
      : gamma(name + ".gamma", 1, d), beta(name + ".beta", 1, d) {
    gamma.value.fill(T(1));
  }
};

template <typename T>
struct BlockParams {
  NormParams<T> norm1;
  Param<T> temporal_weight; // L x L
  Param<T> temporal_bias;   // L x 1
  NormParams<T> norm2;
  LinearParams<T> feature;               // D x D
  std::optional<LinearParams<T>> time_proj; // E x D, RepIn only
};

template <typename T>
struct ModelParams {
  MlpConfig config;
  std::optional<LinearParams<T>> motion_proj; // FC0: x_t -> D
  std::optional<LinearParams<T>> cond_proj;   // FC1: p -> D
  LinearParams<T> input_proj;                 // backbone input -> D
  std::optional<LinearParams<T>> time_proj;   // Add / Concat: E -> D
  std::vector<BlockParams<T>> blocks;
  LinearParams<T> output_proj; // D -> out_dim

  // Visits every parameter in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    visit([&](Param<T>& p) { out.push_back(&p); });
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const Param<T>& p) { n += p.value.size(); });
    return n;
  }

  void zero_grad() {
    visit([](Param<T>& p) { p.zero_grad(); });
  }

  template <typename U>
  [[nodiscard]] ModelParams<U> cast() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    auto lin = [&](auto& l) {
      f(l.weight);
      f(l.bias);
    };
    if (self.motion_proj) lin(*self.motion_proj);
    if (self.cond_proj) lin(*self.cond_proj);
    lin(self.input_proj);
    if (self.time_proj) lin(*self.time_proj);
    for (auto& b : self.blocks) {
      f(b.norm1.gamma);
      f(b.norm1.beta);
      f(b.temporal_weight);
      f(b.temporal_bias);
      f(b.norm2.gamma);
      f(b.norm2.beta);
      lin(b.feature);
      if (b.time_proj) lin(*b.time_proj);
    }
    lin(self.output_proj);
  }
};

// Allocates every parameter for `config` (weights zero, LayerNorm gain one).
template <typename T>
ModelParams<T> make_params(const MlpConfig& config) {
  config.validate();
  ModelParams<T> m;
  m.config = config;
  const std::size_t d = config.latent_dim;
  const std::size_t l = config.token_count();
  const std::size_t e = config.embed_dim;
  if (config.kind == ModelKind::Diffusion) {
    m.motion_proj.emplace("motion_proj", config.out_dim, d);
    m.cond_proj.emplace("cond_proj", config.in_dim, d);
    m.input_proj = LinearParams<T>("input_proj", 2 * d, d);
    if (config.timestep_mode == TimestepMode::Add ||
        config.timestep_mode == TimestepMode::Concat) {
      m.time_proj.emplace("time_proj", e, d);
    }
  } else {
    m.input_proj = LinearParams<T>("input_proj", config.in_dim, d);
  }
  m.blocks.resize(config.num_blocks);
  for (std::size_t j = 0; j < config.num_blocks; ++j) {
    const std::string prefix = "blocks." + std::to_string(j);
    BlockParams<T>& b = m.blocks[j];
    b.norm1 = NormParams<T>(prefix + ".norm1", d);
    b.temporal_weight = Param<T>(prefix + ".temporal.weight", l, l);
    b.temporal_bias = Param<T>(prefix + ".temporal.bias", l, 1);
    b.norm2 = NormParams<T>(prefix + ".norm2", d);
    b.feature = LinearParams<T>(prefix + ".feature", d, d);
    if (config.kind == ModelKind::Diffusion &&
        config.timestep_mode == TimestepMode::RepIn) {
      b.time_proj.emplace(prefix + ".time_proj", e, d);
    }
  }
  m.output_proj = LinearParams<T>("output_proj", d, config.out_dim);
  return m;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out = make_params<U>(config);
  std::vector<const Param<T>*> src;
  visit([&](const Param<T>& p) { src.push_back(&p); });
  std::size_t i = 0;
  out.visit([&](Param<U>& p) {
    p.value = src[i]->value.template cast<U>();
    p.grad = src[i]->grad.template cast<U>();
    ++i;
  });
  return out;
}

enum class OutputInit {
  Zero,           // output projection weights and bias all zero
  IdentityMotion, // zero weights, bias = identity rotation in every 6D slot
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every linear and temporal map;
// the output projection is initialized per `output_init`.
template <typename T>
void init_params(ModelParams<T>& m, std::uint64_t seed,
                 OutputInit output_init = OutputInit::IdentityMotion) {
  Rng rng(mix_seed(seed, 0x1417));
  auto fill_uniform = [&](Param<T>& p, std::size_t fan_in) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (T& v : p.value.span()) {
      v = static_cast<T>(rng.uniform(-k, k));
    }
  };
  auto init_linear = [&](LinearParams<T>& l) {
    fill_uniform(l.weight, l.weight.value.rows());
    fill_uniform(l.bias, l.weight.value.rows());
  };
  if (m.motion_proj) init_linear(*m.motion_proj);
  if (m.cond_proj) init_linear(*m.cond_proj);
  init_linear(m.input_proj);
  if (m.time_proj) init_linear(*m.time_proj);
  for (auto& b : m.blocks) {
    b.norm1.gamma.value.fill(T(1));
    b.norm1.beta.value.fill(T(0));
    b.norm2.gamma.value.fill(T(1));
    b.norm2.beta.value.fill(T(0));
    fill_uniform(b.temporal_weight, b.temporal_weight.value.cols());
    fill_uniform(b.temporal_bias, b.temporal_weight.value.cols());
    init_linear(b.feature);
    if (b.time_proj) init_linear(*b.time_proj);
  }
  m.output_proj.weight.value.fill(T(0));
  m.output_proj.bias.value.fill(T(0));
  if (output_init == OutputInit::IdentityMotion &&
      m.config.out_dim % kRot6DWidth == 0) {
    const auto ident = identity_rot6d<T>();
    auto bias = m.output_proj.bias.value.span();
    for (std::size_t i = 0; i < bias.size(); ++i) {
      bias[i] = ident[i % kRot6DWidth];
    }
  }
  m.zero_grad();
}

// ---------------------------------------------------------------------------
// Sinusoidal timestep embedding: emb[2i] = sin(t / 10000^(2i/E)),
// emb[2i+1] = cos(t / 10000^(2i/E)).

template <typename T>
Tensor2<T> timestep_embed(std::size_t t, std::size_t dim) {
  if (dim % 2 != 0) {
    throw DimensionError("timestep_embed: embedding width must be even");
  }
  Tensor2<T> emb(1, dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq =
        std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(dim));
    const double arg = static_cast<double>(t) * freq;
    emb(0, 2 * i) = static_cast<T>(std::sin(arg));
    emb(0, 2 * i + 1) = static_cast<T>(std::cos(arg));
  }
  return emb;
}

// ---------------------------------------------------------------------------
// One block: h0 = h + u; h1 = h0 + SiLU(Temporal(LN1(h0)));
// out = h1 + SiLU(Feature(LN2(h1))).

template <typename T>
struct BlockCache {
  Tensor2<T> input; // h0 (after timestep injection)
  LayerNormCache<T> norm1;
  Tensor2<T> norm1_out;
  Tensor2<T> temporal_pre;
  Tensor2<T> mid; // h1
  LayerNormCache<T> norm2;
  Tensor2<T> norm2_out;
  Tensor2<T> feature_pre;
};

template <typename T>
Tensor2<T> mlp_block_forward(const BlockParams<T>& b, const Tensor2<T>& h,
                             std::optional<ConstSpan<T>> inject,
                             BlockCache<T>* cache = nullptr) {
  if (h.rows() != b.temporal_weight.value.cols() ||
      h.cols() != b.feature.weight.value.rows()) {
    throw DimensionError("mlp_block_forward: activation shape does not match block");
  }
  Tensor2<T> h0 = h;
  if (inject) {
    add_row_broadcast(h0, *inject);
  }
  LayerNormCache<T> ln1;
  Tensor2<T> n1 = layernorm_forward(h0, b.norm1.gamma.value.span(),
                                    b.norm1.beta.value.span(), kLayerNormEps,
                                    cache ? &ln1 : nullptr);
  Tensor2<T> a1 = temporal_forward(n1, b.temporal_weight.value,
                                   b.temporal_bias.value.span());
  Tensor2<T> h1 = silu(a1);
  add_inplace(h1, h0);
  LayerNormCache<T> ln2;
  Tensor2<T> n2 = layernorm_forward(h1, b.norm2.gamma.value.span(),
                                    b.norm2.beta.value.span(), kLayerNormEps,
                                    cache ? &ln2 : nullptr);
  Tensor2<T> a2 =
      linear_forward(n2, b.feature.weight.value, b.feature.bias.value.span());
  Tensor2<T> out = silu(a2);
  add_inplace(out, h1);
  if (cache) {
    cache->input = std::move(h0);
    cache->norm1 = std::move(ln1);
    cache->norm1_out = std::move(n1);
    cache->temporal_pre = std::move(a1);
    cache->mid = std::move(h1);
    cache->norm2 = std::move(ln2);
    cache->norm2_out = std::move(n2);
    cache->feature_pre = std::move(a2);
  }
  return out;
}

// Accumulates parameter gradients into `b` and returns dL/dh. When
// `d_inject` is non-empty it receives dL/du (the column sums of dL/dh0).
template <typename T>
Tensor2<T> mlp_block_backward(BlockParams<T>& b, const BlockCache<T>& c,
                              const Tensor2<T>& d_out, std::span<T> d_inject = {}) {
  Tensor2<T> d_a2 = silu_backward(c.feature_pre, d_out);
  Tensor2<T> d_n2 = linear_backward_into(c.norm2_out, b.feature.weight.value, d_a2,
                                         b.feature.weight.grad,
                                         b.feature.bias.grad.span());
  Tensor2<T> d_h1 = layernorm_backward_into(c.norm2, b.norm2.gamma.value.span(),
                                            d_n2, b.norm2.gamma.grad.span(),
                                            b.norm2.beta.grad.span());
  add_inplace(d_h1, d_out);
  Tensor2<T> d_a1 = silu_backward(c.temporal_pre, d_h1);
  Tensor2<T> d_n1 = temporal_backward_into(c.norm1_out, b.temporal_weight.value,
                                           d_a1, b.temporal_weight.grad,
                                           b.temporal_bias.grad.span());
  Tensor2<T> d_h0 = layernorm_backward_into(c.norm1, b.norm1.gamma.value.span(),
                                            d_n1, b.norm1.gamma.grad.span(),
                                            b.norm1.beta.grad.span());
  add_inplace(d_h0, d_h1);
  if (!d_inject.empty()) {
    std::fill(d_inject.begin(), d_inject.end(), T(0));
    accumulate_column_sum(d_h0, d_inject);
  }
  return d_h0;
}

// ---------------------------------------------------------------------------
// Full network

template <typename T>
struct ForwardCache {
  std::size_t timestep = 0;
  Tensor2<T> motion_in; // x_t (diffusion)
  Tensor2<T> cond_in;   // p
  Tensor2<T> backbone_in; // [FC0(x_t) | FC1(p)] for diffusion, p for predictive
  Tensor2<T> embedding;   // 1 x E
  std::vector<Tensor2<T>> time_pre; // pre-SiLU projections of the embedding
  std::vector<BlockCache<T>> blocks;
  Tensor2<T> final_hidden;
};

namespace detail {

template <typename T>
Tensor2<T> hconcat(const Tensor2<T>& a, const Tensor2<T>& b) {
  require(a.rows() == b.rows(), "hconcat: row mismatch");
  Tensor2<T> out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
    std::copy(b.row(r).begin(), b.row(r).end(),
              out.row(r).begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

template <typename T>
Tensor2<T> column_slice(const Tensor2<T>& a, std::size_t begin, std::size_t count) {
  Tensor2<T> out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto src = a.row(r).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

// Shared trunk: optional timestep injection, M blocks, output projection.
template <typename T>
Tensor2<T> run_backbone(const ModelParams<T>& m, Tensor2<T> h, std::size_t t,
                        ForwardCache<T>* cache) {
  const MlpConfig& cfg = m.config;
  const bool timed = cfg.uses_timestep();
  Tensor2<T> emb;
  if (timed) {
    emb = timestep_embed<T>(t, cfg.embed_dim);
  }
  if (cache) {
    cache->timestep = t;
    cache->time_pre.clear();
    cache->blocks.assign(m.blocks.size(), BlockCache<T>{});
  }
  if (timed && (cfg.timestep_mode == TimestepMode::Add ||
                cfg.timestep_mode == TimestepMode::Concat)) {
    Tensor2<T> pre = linear_forward(emb, m.time_proj->weight.value,
                                    m.time_proj->bias.value.span());
    Tensor2<T> u = silu(pre);
    if (cfg.timestep_mode == TimestepMode::Add) {
      add_row_broadcast(h, u.row(0));
    } else {
      Tensor2<T> grown(h.rows() + 1, h.cols());
      std::copy(h.data(), h.data() + h.size(), grown.data());
      std::copy(u.data(), u.data() + u.size(), grown.data() + h.size());
      h = std::move(grown);
    }
    if (cache) cache->time_pre.push_back(std::move(pre));
  }
  for (std::size_t j = 0; j < m.blocks.size(); ++j) {
    const BlockParams<T>& b = m.blocks[j];
    BlockCache<T>* bc = cache ? &cache->blocks[j] : nullptr;
    if (timed && cfg.timestep_mode == TimestepMode::RepIn) {
      Tensor2<T> pre = linear_forward(emb, b.time_proj->weight.value,
                                      b.time_proj->bias.value.span());
      const Tensor2<T> u = silu(pre);
      h = mlp_block_forward(b, h, std::optional<std::span<const T>>(u.row(0)), bc);
      if (cache) cache->time_pre.push_back(std::move(pre));
    } else {
      h = mlp_block_forward(b, h, std::nullopt, bc);
    }
  }
  if (timed && cfg.timestep_mode == TimestepMode::Concat) {
    h = slice_rows(h, 0, cfg.seq_len);
  }
  Tensor2<T> out = linear_forward(h, m.output_proj.weight.value,
                                  m.output_proj.bias.value.span());
  if (cache) {
    cache->embedding = std::move(emb);
    cache->final_hidden = std::move(h);
  }
  return out;
}

} // namespace detail

// Predictive MLP: input projection -> M blocks -> output projection.
template <typename T>
Tensor2<T> mlp_forward(const ModelParams<T>& m, const Tensor2<T>& input,
                       ForwardCache<T>* cache = nullptr) {
  if (m.config.kind != ModelKind::Predictive) {
    throw ConfigError("mlp_forward: model is not a predictive MLP");
  }
  if (input.rows() != m.config.seq_len || input.cols() != m.config.in_dim) {
    throw DimensionError("mlp_forward: input must be seq_len x in_dim");
  }
  Tensor2<T> h = linear_forward(input, m.input_proj.weight.value,
                                m.input_proj.bias.value.span());
  if (cache) {
    cache->cond_in = input;
    cache->backbone_in = input;
  }
  return detail::run_backbone(m, std::move(h), 0, cache);
}

// Diffusion denoiser: x0_hat = MLP(Concat(FC0(x_t), FC1(p)), t).
template <typename T>
Tensor2<T> diffusion_forward(const ModelParams<T>& m, const Tensor2<T>& x_t,
                             const Tensor2<T>& p, std::size_t t,
                             ForwardCache<T>* cache = nullptr) {
  const MlpConfig& cfg = m.config;
  if (cfg.kind != ModelKind::Diffusion) {
    throw ConfigError("diffusion_forward: model is not a diffusion model");
  }
  if (x_t.rows() != cfg.seq_len || x_t.cols() != cfg.out_dim ||
      p.rows() != cfg.seq_len || p.cols() != cfg.in_dim) {
    throw DimensionError("diffusion_forward: expected x_t [N x " +
                         std::to_string(cfg.out_dim) + "] and p [N x " +
                         std::to_string(cfg.in_dim) + "]");
  }
  const Tensor2<T> xb = linear_forward(x_t, m.motion_proj->weight.value,
                                       m.motion_proj->bias.value.span());
  const Tensor2<T> pb = linear_forward(p, m.cond_proj->weight.value,
                                       m.cond_proj->bias.value.span());
  Tensor2<T> cat = detail::hconcat(xb, pb);
  Tensor2<T> h = linear_forward(cat, m.input_proj.weight.value,
                                m.input_proj.bias.value.span());
  if (cache) {
    cache->motion_in = x_t;
    cache->cond_in = p;
    cache->backbone_in = std::move(cat);
  }
  return detail::run_backbone(m, std::move(h), t, cache);
}

// Accumulates dL/dparams for the forward pass recorded in `cache`.
template <typename T>
void model_backward(ModelParams<T>& m, const ForwardCache<T>& cache,
                    const Tensor2<T>& d_out) {
  const MlpConfig& cfg = m.config;
  const bool timed = cfg.uses_timestep();
  Tensor2<T> dh = linear_backward_into(cache.final_hidden, m.output_proj.weight.value,
                                       d_out, m.output_proj.weight.grad,
                                       m.output_proj.bias.grad.span());
  if (timed && cfg.timestep_mode == TimestepMode::Concat) {
    Tensor2<T> grown(dh.rows() + 1, dh.cols());
    std::copy(dh.data(), dh.data() + dh.size(), grown.data());
    dh = std::move(grown);
  }
  const bool repin = timed && cfg.timestep_mode == TimestepMode::RepIn;
  Tensor2<T> d_u(1, cfg.latent_dim);
  for (std::size_t jj = m.blocks.size(); jj-- > 0;) {
    BlockParams<T>& b = m.blocks[jj];
    dh = mlp_block_backward(b, cache.blocks[jj], dh,
                            repin ? d_u.span() : std::span<T>{});
    if (repin) {
      const Tensor2<T> d_pre = silu_backward(cache.time_pre[jj], d_u);
      linear_param_grads_into(cache.embedding, d_pre, b.time_proj->weight.grad,
                              b.time_proj->bias.grad.span());
    }
  }
  if (timed && (cfg.timestep_mode == TimestepMode::Add ||
                cfg.timestep_mode == TimestepMode::Concat)) {
    if (cfg.timestep_mode == TimestepMode::Add) {
      d_u.fill(T(0));
      accumulate_column_sum(dh, d_u.span());
    } else {
      std::copy(dh.row(cfg.seq_len).begin(), dh.row(cfg.seq_len).end(),
                d_u.row(0).begin());
      dh = slice_rows(dh, 0, cfg.seq_len);
    }
    const Tensor2<T> d_pre = silu_backward(cache.time_pre.front(), d_u);
    linear_param_grads_into(cache.embedding, d_pre, m.time_proj->weight.grad,
                            m.time_proj->bias.grad.span());
  }
  if (cfg.kind == ModelKind::Predictive) {
    linear_param_grads_into(cache.backbone_in, dh, m.input_proj.weight.grad,
                            m.input_proj.bias.grad.span());
    return;
  }
  const Tensor2<T> d_cat =
      linear_backward_into(cache.backbone_in, m.input_proj.weight.value, dh,
                           m.input_proj.weight.grad, m.input_proj.bias.grad.span());
  const std::size_t d = cfg.latent_dim;
  linear_param_grads_into(cache.motion_in, detail::column_slice(d_cat, 0, d),
                          m.motion_proj->weight.grad,
                          m.motion_proj->bias.grad.span());
  linear_param_grads_into(cache.cond_in, detail::column_slice(d_cat, d, d),
                          m.cond_proj->weight.grad, m.cond_proj->bias.grad.span());
}

} // namespace agrol
