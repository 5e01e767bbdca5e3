#include "dractrl/flow.hpp"

#include <cmath>
#include <thread>

#include "dractrl/error.hpp"
#include "dractrl/mixup.hpp"
#include "dractrl/numerics/ops.hpp"
#include "dractrl/vocab.hpp"

namespace dractrl {

LatentFrame FlowSample::target(std::size_t k) const {
  LatentFrame out = noise.at(k);
  const auto& y = clean.frames.at(k + 1);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= y.data[i];
  return out;
}

double draw_timestep(Rng& rng) { return rng.uniform(); }

std::vector<double> flow_loss_weights(int k, LossWeighting weighting) {
  if (k < 0) throw DomainError("flow_loss_weights: negative K");
  std::vector<double> w(static_cast<std::size_t>(k) + 1, 1.0);
  if (weighting == LossWeighting::transition && k > 0)
    for (int i = 0; i <= k; ++i) w[static_cast<std::size_t>(i)] = loss_weight(i, k);
  return w;
}

namespace {

LatentFrame gaussian_frame(const LatentFrame& like, Rng& rng) {
  LatentFrame f(like.channels, like.height, like.width);
  for (auto& v : f.data) v = static_cast<float>(rng.normal());
  return f;
}

LatentFrame interpolate(const LatentFrame& y, const LatentFrame& eps, double t) {
  LatentFrame out(y.channels, y.height, y.width);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    out.data[i] = static_cast<float>((1.0 - t) * y.data[i] + t * eps.data[i]);
  return out;
}

}  // namespace

FlowSample make_noisy(const LatentVideo& clean, double t, Rng& rng, LossWeighting weighting, bool noise_condition) {
  clean.validate();
  if (clean.size() < 2) throw LayoutError("make_noisy: need at least 2 latent frames");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("make_noisy: t outside [0, 1]");
  FlowSample s;
  s.clean = clean;
  s.t = t;
  s.noisy = clean;
  s.weights = flow_loss_weights(clean.k(), weighting);
  if (noise_condition) {
    s.cond_noise = gaussian_frame(clean.frames[0], rng);
    s.noisy.frames[0] = interpolate(clean.frames[0], *s.cond_noise, t);
  }
  for (std::size_t n = 1; n < clean.size(); ++n) {
    s.noise.push_back(gaussian_frame(clean.frames[n], rng));
    s.noisy.frames[n] = interpolate(clean.frames[n], s.noise.back(), t);
  }
  return s;
}

namespace {

void check_pred_shape(std::size_t rows, std::size_t cols, const FlowSample& s) {
  const auto& f = s.clean.frames[0];
  if (rows != s.clean.size() * f.tokens() || cols != f.channels) {
    throw DimensionError("reweighted_loss: prediction " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " for " + std::to_string(s.clean.size()) + " frames of " + std::to_string(f.tokens()) +
                         " tokens x " + std::to_string(f.channels) + " channels");
  }
}

}  // namespace

template <typename T>
Tensor<T> reweighted_loss(const Tensor<T>& pred, const FlowSample& sample) {
  check_pred_shape(pred.rows(), pred.cols(), sample);
  const std::size_t hw = sample.clean.frames[0].tokens(), c = sample.clean.frames[0].channels;
  const auto kk = static_cast<std::size_t>(sample.k());
  std::vector<T> target(pred.numel(), T(0));
  std::vector<T> row_w(pred.rows(), T(0));
  for (std::size_t k = 0; k <= kk; ++k) {
    const auto tgt = sample.target(k);
    const std::size_t base = (k + 1) * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      row_w[base + p] = static_cast<T>(sample.weights[k] / (static_cast<double>(kk + 1) * double(hw * c)));
      for (std::size_t ch = 0; ch < c; ++ch) target[(base + p) * c + ch] = static_cast<T>(tgt.data[ch * hw + p]);
    }
  }
  auto diff = sub(pred, Tensor<T>::from_values(pred.shape(), std::move(target)));
  return sum(row_scale(square(diff), std::span<const T>(row_w)));
}

double reweighted_loss(const LatentVideo& pred, const FlowSample& sample) {
  if (pred.size() != sample.clean.size()) throw DimensionError("reweighted_loss: frame count mismatch");
  double total = 0;
  for (std::size_t k = 0; k + 1 < pred.size(); ++k) {
    const auto tgt = sample.target(k);
    const auto& p = pred.frames[k + 1];
    if (!p.same_shape(tgt)) throw DimensionError("reweighted_loss: frame shape mismatch");
    double se = 0;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double d = static_cast<double>(p.data[i]) - tgt.data[i];
      se += d * d;
    }
    total += sample.weights[k] * se / static_cast<double>(p.data.size());
  }
  return total / static_cast<double>(pred.size() - 1);
}

bool mode_noises_condition(ModelMode mode) { return mode == ModelMode::two_frame_t2v; }

namespace {

template <typename T>
Tensor<T> sample_loss(const TrainingExample& ex, const ModelWeights<T>& weights, const ModelConfig& config,
                      const TrainSettings& settings, std::uint64_t step, std::size_t index) {
  Rng rng(settings.seed, stream_id({step, index}));
  const double t = draw_timestep(rng);
  auto sample = make_noisy(ex.clean, t, rng, settings.weighting, mode_noises_condition(config.mode));
  auto layout = ex.cond_prompt.empty() ? build_token_layout(config, ex.clean, ex.target_prompt)
                                       : build_token_layout(config, ex.clean, ex.target_prompt,
                                                            std::span<const std::int32_t>(ex.cond_prompt));
  auto mask = build_attention_mask(layout);
  auto pred = model_forward(latent_to_tokens<T>(sample.noisy), t, layout, mask, weights, config);
  return reweighted_loss(pred, sample);
}

}  // namespace

template <typename T>
double batch_loss(std::span<const TrainingExample> batch, const ModelWeights<T>& weights, const ModelConfig& config,
                  const TrainSettings& settings, std::uint64_t draw_step) {
  NoGradGuard guard;
  double total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    total += static_cast<double>(sample_loss(batch[i], weights, config, settings, draw_step, i).item());
  return total / static_cast<double>(batch.size());
}

template <typename T>
double train_step(std::span<const TrainingExample> batch, ModelWeights<T>& weights, OptimizerState<T>& state,
                  const ModelConfig& config, const TrainSettings& settings) {
  if (batch.empty()) throw DomainError("train_step: empty batch");
  auto params = collect_trainable(weights);
  if (params.empty()) throw ConfigError("train_step: no trainable tensors");
  if (state.first_moment.size() != params.size()) {
    throw ConfigError("train_step: optimizer state holds " + std::to_string(state.first_moment.size()) +
                      " tensors, model trains " + std::to_string(params.size()));
  }

  const std::size_t b = batch.size();
  std::vector<std::vector<std::vector<T>>> grads(b);
  std::vector<double> losses(b, 0.0);
  std::vector<std::exception_ptr> errors(b);
  const std::uint64_t step = settings.draw_step.value_or(state.step);

  auto run = [&](std::size_t i) {
    try {
      auto local = alias_weights(weights);
      auto loss = sample_loss(batch[i], local, config, settings, step, i);
      losses[i] = static_cast<double>(loss.item());
      backward(scale(loss, static_cast<T>(1.0 / static_cast<double>(b))));
      for (auto& p : collect_trainable(local)) {
        auto g = p.grad();
        grads[i].emplace_back(g.begin(), g.end());
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(settings.threads, static_cast<unsigned>(b)));
  if (threads == 1) {
    for (std::size_t i = 0; i < b; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < b; i += threads) run(i);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<std::vector<T>> total = std::move(grads[0]);
  for (std::size_t i = 1; i < b; ++i)
    for (std::size_t p = 0; p < total.size(); ++p)
      for (std::size_t j = 0; j < total[p].size(); ++j) total[p][j] += grads[i][p][j];

  double mean = 0;
  for (double l : losses) mean += l;
  mean /= static_cast<double>(b);
  if (!std::isfinite(mean)) throw NumericError("train_step: non-finite loss at step " + std::to_string(step));
  adamw_step(state, std::span<Tensor<T>>(params), std::span<const std::vector<T>>(total));
  return mean;
}

LatentVideo euler_sample(const LatentFrame& cond, std::size_t frames, const VelocityFn& velocity,
                         const SamplerSettings& settings, Rng& rng, const SampleObserver& observer) {
  if (settings.steps < 1) throw DomainError("euler_sample: steps must be >= 1");
  if (frames < 2) throw LayoutError("euler_sample: need at least 2 latent frames");
  const std::size_t hw = cond.tokens(), c = cond.channels, frame_len = hw * c;
  std::vector<double> cond_tok(frame_len);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) cond_tok[p * c + ch] = cond.data[ch * hw + p];

  const bool renoise = mode_noises_condition(settings.mode);
  std::vector<double> cond_eps;
  if (renoise) {
    cond_eps.resize(frame_len);
    for (auto& v : cond_eps) v = rng.normal();
  }
  std::vector<double> state(frames * frame_len);
  for (std::size_t i = frame_len; i < state.size(); ++i) state[i] = rng.normal();

  auto freeze = [&](double t) {
    for (std::size_t i = 0; i < frame_len; ++i)
      state[i] = renoise ? (1.0 - t) * cond_tok[i] + t * cond_eps[i] : cond_tok[i];
  };
  freeze(1.0);

  const double dt = 1.0 / settings.steps;
  for (int s = 0; s < settings.steps; ++s) {
    const double t = static_cast<double>(settings.steps - s) / settings.steps;
    const double t_next = static_cast<double>(settings.steps - s - 1) / settings.steps;
    const auto v = velocity(state, t);
    if (v.size() != state.size()) throw DimensionError("euler_sample: velocity size mismatch");
    for (std::size_t i = 0; i < state.size(); ++i) state[i] -= dt * v[i];
    freeze(t_next);
    for (double x : state)
      if (!std::isfinite(x)) throw NumericError("euler_sample: non-finite state at step " + std::to_string(s));
    if (observer) observer(s, t_next, state);
  }

  std::vector<LatentFrame> out;
  for (std::size_t n = 0; n < frames; ++n) {
    LatentFrame f(c, cond.height, cond.width);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) f.data[ch * hw + p] = static_cast<float>(state[n * frame_len + p * c + ch]);
    out.push_back(std::move(f));
  }
  return make_latent_video(std::move(out), 4);
}

template <typename T>
VelocityFn model_velocity(const TokenLayout& layout, const ModelWeights<T>& weights, const ModelConfig& config) {
  auto mask = std::make_shared<AttentionMask>(build_attention_mask(layout));
  return [layout, mask, weights, config](const std::vector<double>& state, double t) {
    NoGradGuard guard;
    std::vector<T> x(state.begin(), state.end());
    auto tokens = Tensor<T>::from_values({layout.visual_size(), config.channels}, std::move(x));
    auto v = model_forward(tokens, t, layout, *mask, weights, config, {.inference = true});
    return std::vector<double>(v.values().begin(), v.values().end());
  };
}

template <typename T>
Image generate_image(const Image& cond, const std::string& target_prompt, const std::optional<std::string>& cond_prompt,
                     const ModelWeights<T>& weights, const ModelConfig& config, const GenerateSettings& settings,
                     const LatentCodec& codec) {
  const Image input = settings.normalize_condition ? normalize_dark_colors(cond) : cond;
  const auto z = codec.encode(input);
  const auto frames = static_cast<std::size_t>(config.effective_k() + 2);
  const auto tp = tokenize_prompt(target_prompt);
  std::vector<std::int32_t> cp;
  if (cond_prompt) cp = tokenize_prompt(*cond_prompt);
  auto layout = cond_prompt ? build_token_layout(config, frames, z.height, z.width, tp, std::span<const std::int32_t>(cp))
                            : build_token_layout(config, frames, z.height, z.width, tp);
  Rng rng(settings.seed);
  auto video = euler_sample(z, frames, model_velocity(layout, weights, config), {settings.steps, config.mode}, rng);
  video.spatial_factor = codec.spatial_factor();
  return clamp01(codec.decode(video.frames.back()));
}

template Tensor<float> reweighted_loss(const Tensor<float>&, const FlowSample&);
template Tensor<double> reweighted_loss(const Tensor<double>&, const FlowSample&);
template double train_step(std::span<const TrainingExample>, ModelWeights<float>&, OptimizerState<float>&,
                           const ModelConfig&, const TrainSettings&);
template double train_step(std::span<const TrainingExample>, ModelWeights<double>&, OptimizerState<double>&,
                           const ModelConfig&, const TrainSettings&);
template double batch_loss(std::span<const TrainingExample>, const ModelWeights<float>&, const ModelConfig&,
                           const TrainSettings&, std::uint64_t);
template double batch_loss(std::span<const TrainingExample>, const ModelWeights<double>&, const ModelConfig&,
                           const TrainSettings&, std::uint64_t);
template VelocityFn model_velocity(const TokenLayout&, const ModelWeights<float>&, const ModelConfig&);
template VelocityFn model_velocity(const TokenLayout&, const ModelWeights<double>&, const ModelConfig&);
template Image generate_image(const Image&, const std::string&, const std::optional<std::string>&,
                              const ModelWeights<float>&, const ModelConfig&, const GenerateSettings&,
                              const LatentCodec&);
template Image generate_image(const Image&, const std::string&, const std::optional<std::string>&,
                              const ModelWeights<double>&, const ModelConfig&, const GenerateSettings&,
                              const LatentCodec&);

}  // namespace dractrl
