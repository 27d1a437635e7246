#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "agrol/errors.hpp"
#include "agrol/network.hpp"
#include "agrol/numerics.hpp"
#include "agrol/random.hpp"

namespace agrol {

inline constexpr std::size_t kDefaultDiffusionSteps = 1000;
inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  [[nodiscard]] std::size_t steps() const { return beta.size(); }

  void check(std::size_t t) const {
    if (t >= steps()) {
      throw ScheduleError("timestep " + std::to_string(t) + " outside [0, " +
                          std::to_string(steps()) + ")");
    }
  }

  static NoiseSchedule from_betas(std::vector<double> betas) {
    NoiseSchedule s;
    s.beta = std::move(betas);
    double prod = 1.0;
    for (const double b : s.beta) {
      if (!(b >= 0.0 && b < 1.0)) {
        throw ScheduleError("beta must lie in [0, 1)");
      }
      s.alpha.push_back(1.0 - b);
      prod *= 1.0 - b;
      s.alpha_bar.push_back(prod);
    }
    return s;
  }
};

// f(u) = cos^2(((u/T + s) / (1 + s)) * pi/2); betas from consecutive ratios of
// f, clipped at 0.999, and alpha_bar rebuilt from the clipped betas so that
// it stays strictly positive.
inline NoiseSchedule cosine_schedule(std::size_t steps = kDefaultDiffusionSteps,
                                     double s = kCosineOffset) {
  if (steps == 0) {
    throw ScheduleError("cosine_schedule: T must be >= 1");
  }
  const double total = static_cast<double>(steps);
  auto f = [&](double u) {
    const double c = std::cos((u / total + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> betas(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const double b = 1.0 - f(static_cast<double>(t + 1)) / f(static_cast<double>(t));
    betas[t] = std::min(b, kMaxBeta);
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

// x_t = sqrt(abar) x0 + sqrt(1 - abar) eps.
template <typename T>
Tensor2<T> q_sample(const Tensor2<T>& x0, std::size_t t, const Tensor2<T>& eps,
                    const NoiseSchedule& sched) {
  sched.check(t);
  detail::require(x0.same_shape(eps), "q_sample: x0 and eps shapes differ");
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor2<T> out(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = static_cast<T>(a * x0.data()[i] + b * eps.data()[i]);
  }
  return out;
}

template <typename T>
Tensor2<T> x0_to_eps(const Tensor2<T>& x_t, const Tensor2<T>& x0_hat, std::size_t t,
                     const NoiseSchedule& sched) {
  sched.check(t);
  detail::require(x_t.same_shape(x0_hat), "x0_to_eps: shape mismatch");
  const double ab = sched.alpha_bar[t];
  if (!(ab < 1.0)) {
    throw ScheduleError("x0_to_eps: alpha_bar is 1, noise is undefined");
  }
  const double a = std::sqrt(ab);
  const double inv = 1.0 / std::sqrt(1.0 - ab);
  Tensor2<T> out(x_t.rows(), x_t.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = static_cast<T>((x_t.data()[i] - a * x0_hat.data()[i]) * inv);
  }
  return out;
}

template <typename T>
Tensor2<T> eps_to_x0(const Tensor2<T>& x_t, const Tensor2<T>& eps_hat, std::size_t t,
                     const NoiseSchedule& sched) {
  sched.check(t);
  detail::require(x_t.same_shape(eps_hat), "eps_to_x0: shape mismatch");
  const double ab = sched.alpha_bar[t];
  const double inv = 1.0 / std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Tensor2<T> out(x_t.rows(), x_t.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = static_cast<T>((x_t.data()[i] - b * eps_hat.data()[i]) * inv);
  }
  return out;
}

// floor(T (K - i) / K) - 1 for i = 0..K-1.
inline std::vector<std::size_t> ddim_timestep_subset(std::size_t steps, std::size_t k) {
  if (k == 0 || k > steps) {
    throw ScheduleError("ddim_timestep_subset: need 1 <= K <= T");
  }
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    out[i] = steps * (k - i) / k - 1;
  }
  return out;
}

// What the network output means.
enum class Parameterization { CleanMotion, Noise };

namespace detail {

template <typename T, typename Denoiser>
void predict_both(Denoiser& model, const Tensor2<T>& x, std::size_t t,
                  const NoiseSchedule& sched, Parameterization param,
                  Tensor2<T>& x0_hat, Tensor2<T>& eps_hat) {
  Tensor2<T> out = model(x, t);
  if (param == Parameterization::CleanMotion) {
    eps_hat = x0_to_eps(x, out, t, sched);
    x0_hat = std::move(out);
  } else {
    x0_hat = eps_to_x0(x, out, t, sched);
    eps_hat = std::move(out);
  }
}

} // namespace detail

// Deterministic DDIM (eta = 0) over the evenly spaced subset. `model(x, t)`
// returns the network output for the current sample. Draws rows*cols
// normals for the starting noise and nothing else.
template <typename T, typename Denoiser>
Tensor2<T> ddim_sample(Denoiser&& model, std::size_t rows, std::size_t cols,
                       const NoiseSchedule& sched, std::size_t num_steps, Rng& rng,
                       Parameterization param = Parameterization::CleanMotion) {
  const auto subset = ddim_timestep_subset(sched.steps(), num_steps);
  Tensor2<T> x = rng.normal_tensor<T>(rows, cols);
  Tensor2<T> x0_hat;
  Tensor2<T> eps_hat;
  for (std::size_t k = 0; k < subset.size(); ++k) {
    const std::size_t t = subset[k];
    detail::predict_both(model, x, t, sched, param, x0_hat, eps_hat);
    if (k + 1 == subset.size()) {
      break;
    }
    const double ab = sched.alpha_bar[subset[k + 1]];
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x.data()[i] = static_cast<T>(a * x0_hat.data()[i] + b * eps_hat.data()[i]);
    }
  }
  return x0_hat;
}

template <typename T, typename Denoiser>
Tensor2<T> ddim_sample(Denoiser&& model, std::size_t rows, std::size_t cols,
                       const NoiseSchedule& sched, std::size_t num_steps,
                       std::uint64_t seed,
                       Parameterization param = Parameterization::CleanMotion) {
  Rng rng(seed);
  return ddim_sample<T>(model, rows, cols, sched, num_steps, rng, param);
}

// Ancestral sampling over all T steps:
// mu = (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t),
// x_{t-1} = mu + sqrt(beta_t) z, with z = 0 at t = 0 (or always, when
// `add_noise` is false).
template <typename T, typename Denoiser>
Tensor2<T> ddpm_sample(Denoiser&& model, std::size_t rows, std::size_t cols,
                       const NoiseSchedule& sched, Rng& rng,
                       Parameterization param = Parameterization::CleanMotion,
                       bool add_noise = true) {
  Tensor2<T> x = rng.normal_tensor<T>(rows, cols);
  Tensor2<T> x0_hat;
  Tensor2<T> eps_hat;
  for (std::size_t t = sched.steps(); t-- > 0;) {
    detail::predict_both(model, x, t, sched, param, x0_hat, eps_hat);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
    const double eps_coef = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
    const double sigma = std::sqrt(sched.beta[t]);
    const bool noisy = add_noise && t > 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = inv_sqrt_alpha * (x.data()[i] - eps_coef * eps_hat.data()[i]);
      if (noisy) {
        v += sigma * rng.normal();
      }
      x.data()[i] = static_cast<T>(v);
    }
  }
  return x;
}

template <typename T, typename Denoiser>
Tensor2<T> ddpm_sample(Denoiser&& model, std::size_t rows, std::size_t cols,
                       const NoiseSchedule& sched, std::uint64_t seed,
                       Parameterization param = Parameterization::CleanMotion,
                       bool add_noise = true) {
  Rng rng(seed);
  return ddpm_sample<T>(model, rows, cols, sched, rng, param, add_noise);
}

// Wraps a diffusion network and its conditioning as a sampler callable.
template <typename T>
auto make_denoiser(const ModelParams<T>& m, const Tensor2<T>& sparse) {
  return [&m, &sparse](const Tensor2<T>& x, std::size_t t) {
    return diffusion_forward(m, x, sparse, t);
  };
}

// Mean squared error against the clean motion (or against eps when the
// network predicts noise). Accumulates grad_scale * dLoss/dparams into `m`.
template <typename T>
double training_loss_dm(ModelParams<T>& m, const Tensor2<T>& x0, const Tensor2<T>& p,
                        std::size_t t, const Tensor2<T>& eps, const NoiseSchedule& sched,
                        Parameterization param = Parameterization::CleanMotion,
                        double grad_scale = 1.0) {
  const Tensor2<T> x_t = q_sample(x0, t, eps, sched);
  ForwardCache<T> cache;
  const Tensor2<T> out = diffusion_forward(m, x_t, p, t, &cache);
  const Tensor2<T>& target = param == Parameterization::CleanMotion ? x0 : eps;
  const double inv_n = 1.0 / static_cast<double>(out.size());
  double loss = 0.0;
  Tensor2<T> d_out(out.rows(), out.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double diff = static_cast<double>(out.data()[i]) - target.data()[i];
    loss += diff * diff;
    d_out.data()[i] = static_cast<T>(2.0 * diff * inv_n * grad_scale);
  }
  model_backward(m, cache, d_out);
  return loss * inv_n;
}

} // namespace agrol
