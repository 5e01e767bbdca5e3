#include <cmath>

#include "doctest.h"
#include "dractrl/error.hpp"
#include "dractrl/flow.hpp"
#include "dractrl/numerics/ops.hpp"
#include "model_fixture.hpp"
#include "rational.hpp"

using namespace dractrl;

namespace {

LatentVideo zero_video(std::size_t frames, std::size_t c, std::size_t h, std::size_t w) {
  return make_latent_video(std::vector<LatentFrame>(frames, LatentFrame(c, h, w)), 4);
}

TrainingExample example_from(const LatentVideo& v, const std::string& prompt) {
  return {v, tokenize_prompt(prompt), {}};
}

}  // namespace

TEST_CASE("draw_timestep") {
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) CHECK(draw_timestep(a) == draw_timestep(b));
  Rng rng(6);
  double acc = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double t = draw_timestep(rng);
    CHECK_UNARY(t >= 0.0 && t <= 1.0);
    acc += t;
  }
  CHECK(std::abs(acc / n - 0.5) < 0.01);
}

TEST_CASE("make_noisy") {
  Rng rng(1);
  auto clean = testing::random_latent(rng, 4, 3, 2, 2);
  auto at0 = make_noisy(clean, 0.0, rng);
  for (std::size_t n = 0; n < 4; ++n) CHECK(at0.noisy.frames[n] == clean.frames[n]);
  auto at1 = make_noisy(clean, 1.0, rng);
  CHECK(at1.noisy.frames[0] == clean.frames[0]);
  for (std::size_t k = 0; k < 3; ++k) CHECK(at1.noisy.frames[k + 1] == at1.noise[k]);
  CHECK(at1.noise[0] != at1.noise[1]);
  CHECK(at1.weights.size() == 3);
  CHECK(at1.weights[1] == loss_weight(1, 2));

  // y = 0, t = 0.5: y_t = eps / 2 and the target is eps.
  auto zero = zero_video(3, 1, 1, 1);
  auto half = make_noisy(zero, 0.5, rng);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(half.noisy.frames[k + 1].data[0] == static_cast<float>(0.5 * half.noise[k].data[0]));
    CHECK(half.target(k).data[0] == half.noise[k].data[0]);
  }
  LatentVideo scalar = zero_video(2, 1, 1, 1);
  FlowSample s;
  s.clean = scalar;
  s.noise = {LatentFrame(1, 1, 1, 2.0f)};
  CHECK(s.target(0).data[0] == 2.0f);

  auto t2v = make_noisy(clean, 1.0, rng, LossWeighting::uniform, true);
  REQUIRE(t2v.cond_noise.has_value());
  CHECK(t2v.noisy.frames[0] == *t2v.cond_noise);
  CHECK(t2v.weights == std::vector<double>{1, 1, 1});
  CHECK_THROWS_AS(make_noisy(clean, 1.5, rng), DomainError);
}

TEST_CASE("reweighted_loss") {
  Rng rng(2);
  auto clean = testing::random_latent(rng, 4, 2, 2, 2);
  auto s = make_noisy(clean, 0.4, rng);
  const std::size_t hw = 4, c = 2;

  // Perfect prediction.
  auto perfect = clean;
  for (std::size_t k = 0; k < 3; ++k) perfect.frames[k + 1] = s.target(k);
  CHECK(reweighted_loss(perfect, s) == 0.0);
  CHECK(reweighted_loss(latent_to_tokens<double>(perfect), s).item() == 0.0);

  // Every frame off by a constant 0.5, so each per-frame MSE is 0.25.
  auto off = perfect;
  for (std::size_t n = 1; n < 4; ++n)
    for (auto& v : off.frames[n].data) v += 0.5f;
  double wsum = 0;
  for (int k = 0; k <= 2; ++k) wsum += testing::rational_loss_weight(k, 2).to_double();
  CHECK(std::abs(reweighted_loss(off, s) - 0.25 * wsum / 3.0) < 1e-7);
  CHECK(std::abs(wsum / 3.0 - 0.4837360434) < 1e-9);

  // Frame 0 of the prediction never matters.
  auto moved = off;
  for (auto& v : moved.frames[0].data) v = 1e3f;
  CHECK(reweighted_loss(moved, s) == reweighted_loss(off, s));

  auto pred = latent_to_tokens<double>(off);
  pred.set_requires_grad(true);
  auto loss = reweighted_loss(pred, s);
  CHECK(std::abs(loss.item() - reweighted_loss(off, s)) < 1e-12);
  backward(loss);
  for (std::size_t i = 0; i < hw * c; ++i) CHECK(pred.grad()[i] == 0.0);
  bool nonzero = false;
  for (std::size_t i = hw * c; i < pred.numel(); ++i) nonzero |= pred.grad()[i] != 0.0;
  CHECK(nonzero);

  CHECK_THROWS_AS(reweighted_loss(Tensor<double>::zeros({15, 2}), s), DimensionError);
}

TEST_CASE("euler_sample with the linear-path oracle") {
  Rng data(3);
  auto y = testing::random_latent(data, 4, 3, 2, 2);
  const auto clean_tokens = latent_to_tokens<double>(y);
  const std::vector<double> target(clean_tokens.values().begin(), clean_tokens.values().end());
  // On y_t = (1 - t) y + t eps, (y_t - y) / t equals eps - y.
  VelocityFn oracle = [&](const std::vector<double>& state, double t) {
    std::vector<double> v(state.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (state[i] - target[i]) / t;
    return v;
  };
  const std::size_t frame_len = y.frames[0].data.size();
  for (int steps : {1, 5, 50}) {
    Rng rng(4);
    bool frozen = true;
    auto out = euler_sample(y.frames[0], 4, oracle, {steps, ModelMode::dra}, rng,
                            [&](int, double, const std::vector<double>& state) {
                              for (std::size_t i = 0; i < frame_len; ++i) frozen &= state[i] == target[i];
                            });
    CHECK(frozen);
    CHECK(out.frames[0] == y.frames[0]);
    double worst = 0;
    for (std::size_t n = 1; n < 4; ++n)
      for (std::size_t i = 0; i < frame_len; ++i)
        worst = std::max(worst, std::abs(double(out.frames[n].data[i]) - y.frames[n].data[i]));
    CHECK(worst < 1e-6);
  }
  Rng a(7), b(7);
  CHECK(euler_sample(y.frames[0], 4, oracle, {5, ModelMode::dra}, a).frames ==
        euler_sample(y.frames[0], 4, oracle, {5, ModelMode::dra}, b).frames);

  Rng rng(8);
  auto t2v = euler_sample(y.frames[0], 2, oracle, {5, ModelMode::two_frame_t2v}, rng);
  CHECK(t2v.frames[0] == y.frames[0]);

  VelocityFn bad = [](const std::vector<double>& s, double) { return std::vector<double>(s.size(), NAN); };
  CHECK_THROWS_AS(euler_sample(y.frames[0], 4, bad, {3, ModelMode::dra}, rng), NumericError);
  CHECK_THROWS_AS(euler_sample(y.frames[0], 4, oracle, {0, ModelMode::dra}, rng), DomainError);
}

namespace {

struct TinyTraining {
  ModelConfig config = testing::tiny_config();
  std::vector<TrainingExample> batch;

  explicit TinyTraining(int count = 2) {
    config.channels = 4;
    config.lora_rank = 0;
    Rng rng(11);
    for (int i = 0; i < count; ++i)
      batch.push_back(example_from(testing::random_latent(rng, 4, 4, 2, 2), "a red circle on a blue background"));
  }
};

}  // namespace

TEST_CASE("train_step overfits a fixed batch") {
  TinyTraining tt;
  Rng rng(12);
  auto w = init_weights<float>(tt.config, rng);
  auto params = collect_trainable(w);
  TrainSettings ts;
  ts.adam.lr = 3e-3;
  ts.draw_step = 0;
  OptimizerState<float> opt(ts.adam, params);
  const double before = batch_loss<float>(tt.batch, w, tt.config, ts, 0);
  for (int s = 0; s < 200; ++s) train_step<float>(tt.batch, w, opt, tt.config, ts);
  const double after = batch_loss<float>(tt.batch, w, tt.config, ts, 0);
  MESSAGE("fixed-draw loss " << before << " -> " << after);
  CHECK(after < 0.25 * before);
}

TEST_CASE("train_step contracts") {
  TinyTraining tt;
  SUBCASE("zero learning rate") {
    Rng rng(13);
    auto w = init_weights<float>(tt.config, rng);
    auto snapshot = clone_weights(w);
    TrainSettings ts;
    ts.adam.lr = 0.0;
    OptimizerState<float> opt(ts.adam, collect_trainable(w));
    train_step<float>(tt.batch, w, opt, tt.config, ts);
    std::vector<Tensor<float>> a, b;
    w.visit([&](const std::string&, Tensor<float>& t, bool) { a.push_back(t); });
    snapshot.visit([&](const std::string&, Tensor<float>& t, bool) { b.push_back(t); });
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(std::equal(a[i].values().begin(), a[i].values().end(), b[i].values().begin()));
  }
  SUBCASE("identical runs give identical traces, threads or not") {
    std::vector<std::vector<double>> traces;
    for (unsigned threads : {1u, 1u, 2u}) {
      Rng rng(14);
      auto w = init_weights<float>(tt.config, rng);
      TrainSettings ts;
      ts.threads = threads;
      OptimizerState<float> opt(ts.adam, collect_trainable(w));
      std::vector<double> trace;
      for (int s = 0; s < 5; ++s) trace.push_back(train_step<float>(tt.batch, w, opt, tt.config, ts));
      traces.push_back(trace);
    }
    CHECK(traces[0] == traces[1]);
    CHECK(traces[0] == traces[2]);
  }
  SUBCASE("non-finite input aborts without an update") {
    Rng rng(15);
    auto w = init_weights<float>(tt.config, rng);
    auto snapshot = clone_weights(w);
    TrainSettings ts;
    OptimizerState<float> opt(ts.adam, collect_trainable(w));
    auto broken = tt.batch;
    broken[1].clean.frames[2].data[0] = NAN;
    CHECK_THROWS_AS(train_step<float>(broken, w, opt, tt.config, ts), NumericError);
    CHECK(opt.step == 0);
    CHECK(std::equal(w.patch_in.w.values().begin(), w.patch_in.w.values().end(),
                     snapshot.patch_in.w.values().begin()));
  }
  SUBCASE("adapter-only training leaves base weights") {
    Rng rng(16);
    tt.config.lora_rank = 2;
    auto w = init_weights<float>(tt.config, rng);
    testing::randomize_all(w, rng, 0.2);  // stands in for a pretrained base
    attach_adapters(w, tt.config, rng);
    set_trainable(w, TrainScope::adapters);
    auto snapshot = clone_weights(w);
    TrainSettings ts;
    tt.batch[0].cond_prompt = tokenize_prompt("a green square");
    OptimizerState<float> opt(ts.adam, collect_trainable(w));
    for (int s = 0; s < 3; ++s) train_step<float>(tt.batch, w, opt, tt.config, ts);
    CHECK(std::equal(w.blocks[0].q.w.values().begin(), w.blocks[0].q.w.values().end(),
                     snapshot.blocks[0].q.w.values().begin()));
    CHECK_FALSE(std::equal(w.blocks[0].q.lora_b.values().begin(), w.blocks[0].q.lora_b.values().end(),
                           snapshot.blocks[0].q.lora_b.values().begin()));
  }
}

TEST_CASE("generate_image") {
  ModelConfig c = testing::tiny_config();
  Rng rng(17);
  auto w = init_weights<float>(c, rng);
  testing::randomize_all(w, rng, 0.1);
  Image cond(16, 16, 0.3f);
  GenerateSettings gs;
  gs.steps = 4;
  auto a = generate_image<float>(cond, "a red circle", std::nullopt, w, c, gs);
  CHECK(a.height == 16);
  CHECK(a.width == 16);
  for (auto v : a.pixels) CHECK_UNARY(v >= 0.0f && v <= 1.0f);
  auto b = generate_image<float>(cond, "a red circle", std::nullopt, w, c, gs);
  CHECK(a == b);
  gs.seed = 1;
  CHECK_FALSE(generate_image<float>(cond, "a red circle", std::nullopt, w, c, gs) == a);
}

TEST_CASE("identity-task training beats the untrained model") {
  // Flat two-colour images; the target equals the condition.
  ModelConfig c = testing::tiny_config();
  c.lora_rank = 0;
  LatentCodec codec;
  MixupSchedule sched{2, 2.2};
  auto make_image = [](Rng& rng) {
    Image img(16, 16);
    const float a[3] = {float(rng.uniform()), float(rng.uniform()), float(rng.uniform())};
    const float b[3] = {float(rng.uniform()), float(rng.uniform()), float(rng.uniform())};
    const auto split = static_cast<std::size_t>(rng.uniform_int(1, 3)) * 4;
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        for (std::size_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = x < split ? a[ch] : b[ch];
    return img;
  };
  Rng data(18);
  std::vector<TrainingExample> pool;
  for (int i = 0; i < 32; ++i) {
    auto img = make_image(data);
    pool.push_back({codec.encode_transition(build_fade_sequence(img, img, sched), sched),
                    tokenize_prompt("a red square"), {}});
  }
  std::vector<Image> held;
  for (int i = 0; i < 8; ++i) held.push_back(make_image(data));

  Rng rng(19);
  auto w = init_weights<float>(c, rng);
  GenerateSettings gs;
  gs.steps = 10;
  auto score = [&] {
    double total = 0;
    for (const auto& img : held) {
      auto out = generate_image<float>(img, "a red square", std::nullopt, w, c, gs, codec);
      double se = 0;
      for (std::size_t i = 0; i < out.pixels.size(); ++i) se += std::pow(out.pixels[i] - img.pixels[i], 2);
      total += se / static_cast<double>(out.pixels.size());
    }
    return total / static_cast<double>(held.size());
  };
  const double untrained = score();
  TrainSettings ts;
  ts.adam.lr = 3e-3;
  OptimizerState<float> opt(ts.adam, collect_trainable(w));
  for (int s = 0; s < 300; ++s) {
    std::vector<TrainingExample> batch(pool.begin() + (s * 4) % 32, pool.begin() + (s * 4) % 32 + 4);
    train_step<float>(batch, w, opt, c, ts);
  }
  const double trained = score();
  MESSAGE("held-out MSE " << untrained << " -> " << trained);
  CHECK(trained <= 0.5 * untrained);
}
