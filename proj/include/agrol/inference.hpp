#pragma once

#include <vector>

#include "agrol/checkpoint.hpp"
#include "agrol/diffusion.hpp"
#include "agrol/features.hpp"
#include "agrol/lossmetrics.hpp"
#include "agrol/synthdata.hpp"

namespace agrol {

inline constexpr std::size_t kDefaultDdimSteps = 5;

// Runs a trained model over sparse-input windows of its sequence length.
class Predictor {
 public:
  explicit Predictor(Checkpoint ck) : ck_(std::move(ck)) {
    if (ck_.model.config.kind == ModelKind::Diffusion) {
      if (ck_.diffusion_steps == 0) {
        throw ConfigError("diffusion checkpoint does not record its step count");
      }
      sched_ = cosine_schedule(ck_.diffusion_steps);
    }
  }

  [[nodiscard]] const Checkpoint& checkpoint() const { return ck_; }
  [[nodiscard]] const MlpConfig& config() const { return ck_.model.config; }
  [[nodiscard]] bool is_diffusion() const { return config().kind == ModelKind::Diffusion; }

  // One window of exactly seq_len frames; positions are recentered first.
  // The diffusion sampler draws its starting noise from `rng`.
  [[nodiscard]] Tensor predict_window(const Tensor& sparse, std::size_t ddim_steps,
                                      Rng& rng) const {
    check_width(sparse);
    const Tensor p = recenter_sparse_input(sparse);
    if (!is_diffusion()) {
      return mlp_forward(ck_.model, p);
    }
    const Parameterization param =
        ck_.predict_noise ? Parameterization::Noise : Parameterization::CleanMotion;
    return ddim_sample<float>(make_denoiser(ck_.model, p), config().seq_len, config().out_dim,
                              sched_, ddim_steps, rng, param);
  }

  // Whole sequence: windows of seq_len at stride seq_len, the last one
  // aligned to the end, stitched with later-wins. Window w samples from
  // Rng(mix_seed(seed, w)).
  [[nodiscard]] Tensor predict_sequence(const Tensor& sparse, std::size_t ddim_steps,
                                        std::uint64_t seed) const {
    check_width(sparse);
    const std::size_t n = config().seq_len;
    const auto offsets = window_offsets(sparse.rows(), n, n);
    std::vector<Tensor> chunks;
    chunks.reserve(offsets.size());
    for (std::size_t w = 0; w < offsets.size(); ++w) {
      Rng rng(mix_seed(seed, w));
      chunks.push_back(predict_window(slice_rows(sparse, offsets[w], n), ddim_steps, rng));
    }
    return stitch(chunks, offsets, sparse.rows());
  }

 private:
  void check_width(const Tensor& sparse) const {
    if (sparse.cols() != config().in_dim) {
      throw DimensionError("sparse input has " + std::to_string(sparse.cols()) +
                           " channels, the model expects " + std::to_string(config().in_dim));
    }
  }

  Checkpoint ck_;
  NoiseSchedule sched_;
};

// Metrics for a prediction of `clip`, placing the prediction by its tracked
// head trajectory.
inline MetricReport evaluate_clip(const SkeletonTree& tree, const MotionClip& clip,
                                  const Tensor& pred_motion) {
  const auto root = to_vec3(clip.root);
  const auto head = to_vec3(clip.head);
  return evaluate(tree, clip.motion, root, head, pred_motion, clip.fps);
}

// Predicts every clip (optionally with a fraction of sparse-input frames
// zeroed) and averages the per-clip reports.
inline MetricReport evaluate_predictor(const SkeletonTree& tree, const Predictor& model,
                                       const std::vector<const MotionClip*>& clips,
                                       std::size_t ddim_steps, std::uint64_t seed,
                                       double mask_fraction = 0.0,
                                       std::uint64_t mask_seed = 0) {
  std::vector<MetricReport> reports;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const MotionClip& c = *clips[i];
    Tensor sparse = clip_sparse_input(tree, c);
    if (mask_fraction > 0.0) {
      sparse = mask_tracking_loss(sparse, mask_fraction, mix_seed(mask_seed, i));
    }
    const Tensor pred = model.predict_sequence(sparse, ddim_steps, mix_seed(seed, i));
    reports.push_back(evaluate_clip(tree, c, pred));
  }
  return average_reports(reports);
}

} // namespace agrol
