#include "dractrl/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <sstream>
#include <thread>

#include "dractrl/error.hpp"
#include "dractrl/vocab.hpp"

namespace dractrl {

namespace {

std::vector<std::int32_t> prompt_ids(const std::string& text) { return tokenize_prompt(text); }

// Pretraining always runs the full-length video layout.
ModelConfig pretrain_model(const ModelConfig& m) {
  ModelConfig c = m;
  c.mode = ModelMode::dra;
  return c;
}

TrainSettings train_settings(const RunConfig& config, double lr, LossWeighting weighting, std::string_view purpose,
                             unsigned threads) {
  TrainSettings s;
  s.adam = {lr, config.train.beta1, config.train.beta2, config.train.eps, config.train.weight_decay};
  s.weighting = weighting;
  s.seed = derive_seed(config.seed, purpose);
  s.threads = threads;
  return s;
}

template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

TrainingExample make_example(const TrainingPair& pair, const ModelConfig& config, const LatentCodec& codec) {
  TrainingExample ex;
  if (config.mode == ModelMode::dra) {
    ex.clean = codec.encode_transition(pair.sequence, MixupSchedule{config.k, 2.2});
  } else {
    ex.clean = make_latent_video({codec.encode(pair.condition), codec.encode(pair.target)}, codec.spatial_factor());
  }
  ex.target_prompt = prompt_ids(pair.prompt);
  if (pair.cond_prompt) ex.cond_prompt = prompt_ids(*pair.cond_prompt);
  return ex;
}

TrainingExample make_pretrain_example(const PretrainVideo& video, const LatentCodec& codec) {
  TrainingExample ex;
  ex.clean = codec.encode_video(video.frames);
  ex.target_prompt = prompt_ids(video.prompt);
  return ex;
}

PretrainVideo pretrain_video(const RunConfig& config, std::uint64_t step, std::size_t index) {
  Rng rng(derive_seed(config.seed, "pretrain-data"), stream_id({step, index}));
  PretrainOptions opts;
  opts.max_speed = config.data.max_speed;
  opts.fade_probability = config.data.fade_probability;
  opts.gamma = config.data.gamma;
  const auto frames = static_cast<std::size_t>(4 * (config.model.k + 1) + 1);
  return gen_pretrain_video(rng, frames, config.data.resolution, opts);
}

TrainingPair finetune_pair(const RunConfig& config, std::uint64_t step, std::size_t index) {
  Rng rng(derive_seed(config.seed, "train-data"), stream_id({step, index}));
  auto scene = gen_scene(rng, config.data.resolution);
  return build_training_pair(scene, config.task_spec(), config.schedule(), rng, config.data.transition);
}

DatasetStream eval_stream(const RunConfig& config, std::size_t count) {
  return DatasetStream(config.task_spec(), derive_seed(config.seed, "eval-data"), count, config.data.resolution,
                       config.schedule(), config.data.transition);
}

ProgressLog::ProgressLog(const std::filesystem::path& path, std::size_t interval, double lr)
    : interval_(std::max<std::size_t>(interval, 1)), lr_(lr) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) throw ConfigError("cannot open metrics log " + path.string());
}

void ProgressLog::record(std::uint64_t step, double loss) {
  sum_ += loss;
  ++count_;
  if (step % interval_ != 0) return;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  std::ostringstream line;
  line << "step=" << step << " loss=" << std::setprecision(9) << sum_ / static_cast<double>(count_)
       << " lr=" << std::setprecision(6) << lr_ << " wall=" << std::fixed << std::setprecision(3) << wall << '\n';
  if (out_.is_open()) {
    out_ << line.str();
    out_.flush();
  }
  sum_ = 0;
  count_ = 0;
  ++lines_;
}

unsigned env_threads() {
  const char* v = std::getenv("DRACTRL_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("DRACTRL_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<unsigned>(n);
}

ModelWeights<float> initial_weights(const RunConfig& config) {
  Rng rng(derive_seed(config.seed, "init"));
  return init_weights<float>(config.model, rng);
}

TrainRun pretrain(const RunConfig& config, std::optional<TrainRun> resume, const StepCallback& on_step,
                  unsigned threads) {
  const ModelConfig model = pretrain_model(config.model);
  const auto settings = train_settings(config, config.train.pretrain_lr, LossWeighting::uniform, "pretrain-noise", threads);
  TrainRun run;
  if (resume) {
    run = std::move(*resume);
    run.losses.clear();
  } else {
    run.weights = initial_weights(config);
  }
  set_trainable(run.weights, TrainScope::base);
  if (!resume) {
    auto params = collect_trainable(run.weights);
    run.optimizer = OptimizerState<float>(settings.adam, params);
  }
  const LatentCodec codec(config.model.channels, 4);
  std::vector<TrainingExample> batch(config.train.batch);
  for (std::uint64_t step = run.optimizer.step; step < config.train.pretrain_steps; ++step) {
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = make_pretrain_example(pretrain_video(config, step, i), codec);
    const double loss = train_step<float>(batch, run.weights, run.optimizer, model, settings);
    run.losses.push_back(loss);
    if (on_step) on_step(step + 1, loss);
  }
  set_trainable(run.weights, TrainScope::none);
  return run;
}

void add_adapters(ModelWeights<float>& weights, const RunConfig& config) {
  Rng rng(derive_seed(config.seed, "adapters"));
  attach_adapters(weights, config.model, rng);
}

TrainRun finetune(const RunConfig& config, ModelWeights<float> base, std::optional<OptimizerState<float>> resume,
                  const StepCallback& on_step, unsigned threads) {
  const auto settings = train_settings(config, config.train.lr, LossWeighting::transition, "finetune-noise", threads);
  TrainRun run;
  run.weights = std::move(base);
  set_trainable(run.weights, TrainScope::adapters);
  if (collect_trainable(run.weights).empty()) throw ConfigError("finetune: weights carry no adapters");
  if (resume) {
    run.optimizer = std::move(*resume);
  } else {
    auto params = collect_trainable(run.weights);
    run.optimizer = OptimizerState<float>(settings.adam, params);
  }
  const LatentCodec codec(config.model.channels, 4);
  std::vector<TrainingExample> batch(config.train.batch);
  for (std::uint64_t step = run.optimizer.step; step < config.train.finetune_steps; ++step) {
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = make_example(finetune_pair(config, step, i), config.model, codec);
    const double loss = train_step<float>(batch, run.weights, run.optimizer, config.model, settings);
    run.losses.push_back(loss);
    if (on_step) on_step(step + 1, loss);
  }
  set_trainable(run.weights, TrainScope::none);
  return run;
}

EvalResult evaluate(const RunConfig& config, const ModelWeights<float>& weights, std::size_t samples, unsigned threads,
                    const std::optional<VlEndpoint>& vl) {
  const auto stream = eval_stream(config, samples);
  const auto task = config.task_spec();
  const LatentCodec codec(config.model.channels, 4);
  const std::uint64_t sample_seed = derive_seed(config.seed, "eval-sample");
  EvalResult out;
  out.records.resize(samples);
  out.generated.resize(samples);
  out.conditions.resize(samples);
  parallel_for(samples, threads, [&](std::size_t i) {
    const auto pair = stream.at(i);
    GenerateSettings gs;
    gs.steps = config.sample.steps;
    gs.seed = Rng(sample_seed, stream_id({i})).next_u64();
    gs.normalize_condition = config.data.normalize_condition;
    auto img = generate_image<float>(pair.condition, pair.prompt, pair.cond_prompt, weights, config.model, gs, codec);
    EvalRecord rec;
    rec.index = i;
    rec.prompt = pair.prompt;
    rec.report = controllability_report(task, img, pair.scene, pair.condition, pair.draw);
    if (vl) rec.report.vl_score = vl_score_request(pair.prompt, pair.condition, img, *vl);
    out.records[i] = std::move(rec);
    out.generated[i] = std::move(img);
    out.conditions[i] = pair.condition;
  });
  return out;
}

double mean_controllability(const EvalResult& r) {
  if (r.records.empty()) return 0.0;
  double s = 0;
  for (const auto& rec : r.records) s += rec.report.controllability;
  return s / static_cast<double>(r.records.size());
}

std::vector<AblationCell> ablation_grid() {
  std::vector<AblationCell> cells;
  for (auto tr : {TransitionKind::fade, TransitionKind::slide})
    for (int frames : {4, 8, 12})
      for (auto mode : {ModelMode::dra, ModelMode::two_frame_t2v, ModelMode::two_frame_i2v}) {
        AblationCell c;
        c.transition = tr;
        c.frames = frames;
        c.mode = mode;
        cells.push_back(c);
      }
  return cells;
}

std::string ablation_table_csv(const std::vector<AblationCell>& cells) {
  std::ostringstream s;
  s << "transition,frames,mode,n,final_loss,controllability,ssim,mse,fid,dino,clip_i,clip_t\n";
  s << std::setprecision(6);
  for (const auto& c : cells)
    s << to_string(c.transition) << ',' << c.frames << ',' << to_string(c.mode) << ',' << c.samples << ','
      << c.final_loss << ',' << c.controllability << ',' << c.ssim << ',' << c.mse << ",,,,\n";
  return s.str();
}

std::string ablation_table_markdown(const std::vector<AblationCell>& cells) {
  std::ostringstream s;
  s << "| transition | frames | mode | n | final loss | controllability | SSIM | MSE |\n";
  s << "|---|---|---|---|---|---|---|---|\n";
  s << std::fixed << std::setprecision(4);
  for (const auto& c : cells)
    s << "| " << to_string(c.transition) << " | " << c.frames << " | " << to_string(c.mode) << " | " << c.samples
      << " | " << c.final_loss << " | " << c.controllability << " | " << c.ssim << " | " << c.mse << " |\n";
  return s.str();
}

std::vector<AblationCell> run_ablation(const RunConfig& config, const AblationOptions& options) {
  config.validate();
  auto say = [&](const std::string& m) {
    if (options.progress) options.progress(m);
  };
  const bool write = !options.out.empty();
  if (write) std::filesystem::create_directories(options.out / "cells");

  say("pretraining base for " + std::to_string(config.train.pretrain_steps) + " steps");
  ProgressLog base_log;
  if (write) base_log = ProgressLog(options.out / "pretrain_metrics.log", config.train.log_interval, config.train.pretrain_lr);
  const auto base = pretrain(config, std::nullopt, [&](std::uint64_t s, double l) { base_log.record(s, l); }, options.threads);

  auto cells = ablation_grid();
  for (auto& cell : cells) {
    RunConfig cfg = config;
    cfg.model.k = cell.frames / 4;
    cfg.model.mode = cell.mode;
    cfg.data.transition = cell.transition;
    const std::string name = to_string(cell.transition) + "_" + std::to_string(cell.frames) + "_" + to_string(cell.mode);
    say("cell " + name);

    auto weights = clone_weights(base.weights);
    add_adapters(weights, cfg);
    ProgressLog log;
    const auto dir = options.out / "cells" / name;
    if (write) log = ProgressLog(dir / "metrics.log", cfg.train.log_interval, cfg.train.lr);
    auto run = finetune(cfg, std::move(weights), std::nullopt, [&](std::uint64_t s, double l) { log.record(s, l); },
                        options.threads);
    const auto eval = evaluate(cfg, run.weights, cfg.eval.samples, options.threads);
    if (write) write_eval_outputs(dir, eval.records);

    const std::size_t tail = std::min<std::size_t>(100, run.losses.size());
    double loss = 0;
    for (std::size_t i = run.losses.size() - tail; i < run.losses.size(); ++i) loss += run.losses[i];
    cell.final_loss = tail ? loss / static_cast<double>(tail) : 0.0;
    cell.samples = eval.records.size();
    for (const auto& r : eval.records) {
      cell.controllability += r.report.controllability;
      cell.ssim += r.report.ssim;
      cell.mse += r.report.mse;
    }
    if (cell.samples) {
      const auto n = static_cast<double>(cell.samples);
      cell.controllability /= n;
      cell.ssim /= n;
      cell.mse /= n;
    }
  }
  if (write) {
    std::ofstream(options.out / "ablation.csv") << ablation_table_csv(cells);
    std::ofstream(options.out / "ablation.md") << ablation_table_markdown(cells);
  }
  return cells;
}

}  // namespace dractrl
