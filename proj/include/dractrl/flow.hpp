#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dractrl/codec.hpp"
#include "dractrl/image.hpp"
#include "dractrl/layout.hpp"
#include "dractrl/model.hpp"
#include "dractrl/numerics/optim.hpp"
#include "dractrl/numerics/rng.hpp"

namespace dractrl {

enum class LossWeighting { transition, uniform };

// One noised training sample. Frame 0 of `noisy` is the clean condition
// unless `noise_condition` was requested, in which case it is noised with
// `cond_noise` and still excluded from the loss.
struct FlowSample {
  LatentVideo clean;
  std::vector<LatentFrame> noise;  // one per noisy frame 1..K+1
  std::optional<LatentFrame> cond_noise;
  double t = 0;
  LatentVideo noisy;
  std::vector<double> weights;  // w(0..K)

  int k() const { return clean.k(); }
  // eps[k] - y[k+1]
  LatentFrame target(std::size_t k) const;
};

// Uniform on [0, 1).
double draw_timestep(Rng& rng);

FlowSample make_noisy(const LatentVideo& clean, double t, Rng& rng,
                      LossWeighting weighting = LossWeighting::transition, bool noise_condition = false);

// Loss weights w(0..K); K = 0 gives {1}.
std::vector<double> flow_loss_weights(int k, LossWeighting weighting);

// 1/(K+1) * sum_k w(k) * MSE(pred frame k+1, target k). `pred` holds every
// visual token of the sample [frames*h*w x C]; frame-0 rows are ignored.
template <typename T>
Tensor<T> reweighted_loss(const Tensor<T>& pred, const FlowSample& sample);
double reweighted_loss(const LatentVideo& pred, const FlowSample& sample);

struct TrainingExample {
  LatentVideo clean;
  std::vector<std::int32_t> target_prompt;
  std::vector<std::int32_t> cond_prompt;  // empty: no condition prompt segment
};

struct TrainSettings {
  AdamWSettings adam{1e-3, 0.9, 0.999, 1e-8, 0.01};
  LossWeighting weighting = LossWeighting::transition;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  // When set, every step reuses the noise and timesteps of this step index,
  // so repeated steps see one fixed set of noised samples.
  std::optional<std::uint64_t> draw_step;
};

// Noising of frame 0 follows the model mode: only two_frame_t2v noises it.
bool mode_noises_condition(ModelMode mode);

// Forward and backward per sample, gradients summed in sample order, one
// AdamW update over the trainable tensors. Returns the mean pre-update loss.
// Noise and timesteps come from (settings.seed, state.step, sample index).
// A non-finite loss throws NumericError before any parameter changes.
template <typename T>
double train_step(std::span<const TrainingExample> batch, ModelWeights<T>& weights, OptimizerState<T>& state,
                  const ModelConfig& config, const TrainSettings& settings);

// Mean loss over `batch` with the noise and timesteps train_step would draw
// at optimizer step `draw_step`; no gradients, no update.
template <typename T>
double batch_loss(std::span<const TrainingExample> batch, const ModelWeights<T>& weights, const ModelConfig& config,
                  const TrainSettings& settings, std::uint64_t draw_step);

// Velocity over all visual tokens of a state [frames*h*w x C] at time t.
using VelocityFn = std::function<std::vector<double>(const std::vector<double>& state, double t)>;
// Called after every step with the step index, the new time and the state.
using SampleObserver = std::function<void(int step, double t, const std::vector<double>& state)>;

struct SamplerSettings {
  int steps = 50;
  ModelMode mode = ModelMode::dra;
};

// Integrates from t = 1 to t = 0 on a uniform grid with Euler steps.
// Frames 1..K+1 start from N(0, 1); frame 0 is rewritten after every step
// with the condition latent (or, in two_frame_t2v, with the condition
// re-noised to the current time).
LatentVideo euler_sample(const LatentFrame& cond, std::size_t frames, const VelocityFn& velocity,
                         const SamplerSettings& settings, Rng& rng, const SampleObserver& observer = {});

// Model velocity with the inference offset active.
template <typename T>
VelocityFn model_velocity(const TokenLayout& layout, const ModelWeights<T>& weights, const ModelConfig& config);

struct GenerateSettings {
  int steps = 50;
  std::uint64_t seed = 0;
  bool normalize_condition = false;
};

template <typename T>
Image generate_image(const Image& cond, const std::string& target_prompt, const std::optional<std::string>& cond_prompt,
                     const ModelWeights<T>& weights, const ModelConfig& config, const GenerateSettings& settings,
                     const LatentCodec& codec = LatentCodec());

}  // namespace dractrl
