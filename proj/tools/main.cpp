// dractrl: data generation, training, inference, evaluation and ablations.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "dractrl/checkpoint.hpp"
#include "dractrl/config.hpp"
#include "dractrl/error.hpp"
#include "dractrl/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dractrl;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kConfig = 2, kNumeric = 3, kFormat = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task, mode, transition;
  std::optional<int> frames;
  std::optional<std::size_t> steps;
  std::optional<double> omega;
  std::optional<int> delta;
  std::string out;
  std::vector<std::string> sets;

  std::string checkpoint;
  bool resume = false;
  std::string cond, target, prompt, prompt_file, cond_prompt;
  std::optional<std::size_t> count, samples;
  std::size_t videos = 0;
  bool vl = false;
};

enum class StepsMean { none, pretrain, finetune, sample, both };

void add_common(CLI::App* cmd, Options& o, StepsMean steps) {
  cmd->add_option("--config", o.config, "JSON config file (flat dotted keys)");
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("--task", o.task, "colorize|deblur|inpaint_outpaint|edges|superres|depth_predict|subject_toy");
  cmd->add_option("--mode", o.mode, "dra|two_frame_t2v|two_frame_i2v");
  cmd->add_option("--transition", o.transition, "fade|slide");
  cmd->add_option("--frames", o.frames, "Transition pixel frames (multiple of 4; sets model.k = frames / 4)");
  switch (steps) {
    case StepsMean::pretrain: cmd->add_option("--steps", o.steps, "Pretraining steps"); break;
    case StepsMean::finetune: cmd->add_option("--steps", o.steps, "Fine-tuning steps"); break;
    case StepsMean::sample: cmd->add_option("--steps", o.steps, "Sampling steps"); break;
    case StepsMean::both: cmd->add_option("--steps", o.steps, "Pretraining and fine-tuning steps"); break;
    case StepsMean::none: break;
  }
  cmd->add_option("--omega", o.omega, "Inference attention offset");
  cmd->add_option("--delta", o.delta, "Frame skip interval of the position embedding");
  cmd->add_option("--out", o.out, "Output path")->required();
  cmd->add_option("--set", o.sets, "Config override key=value (repeatable)");
}

RunConfig resolve_config(const Options& o, StepsMean steps, RunConfig base = {}) {
  RunConfig c = o.config.empty() ? base : load_config(o.config, base);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.seed = *o.seed;
  if (o.task) set_config_value(c, "data.task", *o.task);
  if (o.mode) set_config_value(c, "model.mode", *o.mode);
  if (o.transition) set_config_value(c, "data.transition", *o.transition);
  if (o.frames) {
    if (*o.frames < 4 || *o.frames % 4 != 0)
      throw ConfigError("--frames must be a positive multiple of 4, got " + std::to_string(*o.frames));
    c.model.k = *o.frames / 4;
  }
  if (o.omega) c.model.omega = *o.omega;
  if (o.delta) c.model.delta = *o.delta;
  if (o.steps) {
    switch (steps) {
      case StepsMean::pretrain: c.train.pretrain_steps = *o.steps; break;
      case StepsMean::finetune: c.train.finetune_steps = *o.steps; break;
      case StepsMean::sample: c.sample.steps = static_cast<int>(*o.steps); break;
      case StepsMean::both:
        c.train.pretrain_steps = *o.steps;
        c.train.finetune_steps = *o.steps;
        break;
      case StepsMean::none: break;
    }
  }
  c.validate();
  return c;
}

// Config stored in a checkpoint, used as the base that files and flags refine.
RunConfig checkpoint_base(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  const auto ck = load_checkpoint<float>(path);
  RunConfig base = parse_config(ck.run_config);
  base.model = ck.config;
  return base;
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + p.string());
  f << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw UsageError("cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

int cmd_datagen(const Options& o) {
  const auto c = resolve_config(o, StepsMean::none);
  const fs::path out = o.out;
  fs::create_directories(out / "pairs");
  const std::size_t count = o.count.value_or(c.data.count);
  DatasetStream stream(c.task_spec(), derive_seed(c.seed, "datagen"), count, c.data.resolution, c.schedule(),
                       c.data.transition);
  std::string index;
  for (std::size_t i = 0; i < count; ++i) {
    const auto pair = stream.at(i);
    const auto stem = out / "pairs" / index_name(i);
    write_ppm(stem.string() + "_cond.ppm", pair.condition);
    write_ppm(stem.string() + "_target.ppm", pair.target);
    nlohmann::json rec{{"index", i},
                       {"task", to_string(pair.task)},
                       {"prompt", pair.prompt},
                       {"cond_prompt", pair.cond_prompt ? nlohmann::json(*pair.cond_prompt) : nlohmann::json(nullptr)},
                       {"blur_radius", pair.draw.blur_radius},
                       {"mask_inside", pair.draw.mask_inside},
                       {"rect", {pair.draw.rect_x0, pair.draw.rect_y0, pair.draw.rect_x1, pair.draw.rect_y1}}};
    index += rec.dump() + "\n";
  }
  write_text(out / "index.jsonl", index);
  for (std::size_t v = 0; v < o.videos; ++v) {
    const auto video = pretrain_video(c, 0, v);
    const auto dir = out / "videos" / index_name(v);
    fs::create_directories(dir);
    for (std::size_t f = 0; f < video.frames.size(); ++f) write_ppm(dir / ("frame_" + index_name(f) + ".ppm"), video.frames[f]);
    write_text(dir / "prompt.txt", video.prompt + "\n");
  }
  write_text(out / "config.json", config_to_json(c));
  log_line("wrote " + std::to_string(count) + " pairs to " + out.string());
  return kOk;
}

int cmd_pretrain(const Options& o) {
  const fs::path out = o.out;
  const auto ckpt = out / "checkpoint.bin";
  std::optional<TrainRun> resume;
  RunConfig c;
  if (o.resume && fs::exists(ckpt)) {
    auto ck = load_checkpoint<float>(ckpt);
    RunConfig base = parse_config(ck.run_config);
    base.model = ck.config;
    c = resolve_config(o, StepsMean::pretrain, base);
    if (!ck.optimizer) throw FormatError(ckpt.string() + " holds no optimizer state to resume from");
    ck = load_checkpoint<float>(ckpt, c.model);
    resume = TrainRun{std::move(ck.weights), std::move(*ck.optimizer), {}};
    log_line("resuming pretraining at step " + std::to_string(resume->optimizer.step));
  } else {
    c = resolve_config(o, StepsMean::pretrain);
    fs::create_directories(out);
    if (!o.resume) fs::remove(out / "metrics.log");
  }
  ProgressLog log(out / "metrics.log", c.train.log_interval, c.train.pretrain_lr);
  auto run = pretrain(c, std::move(resume), [&](std::uint64_t s, double l) { log.record(s, l); }, env_threads());
  save_checkpoint(ckpt, run.weights, c.model, TrainScope::base, &run.optimizer, config_to_json(c));
  write_text(out / "config.json", config_to_json(c));
  log_line("pretrained to step " + std::to_string(run.optimizer.step) + ", checkpoint " + ckpt.string());
  return kOk;
}

int cmd_finetune(const Options& o) {
  const fs::path out = o.out;
  const auto ckpt = out / "checkpoint.bin";
  RunConfig c;
  ModelWeights<float> weights;
  std::optional<OptimizerState<float>> resume;
  if (o.resume && fs::exists(ckpt)) {
    c = resolve_config(o, StepsMean::finetune, checkpoint_base(ckpt.string()));
    auto ck = load_checkpoint<float>(ckpt, c.model);
    if (!ck.optimizer) throw FormatError(ckpt.string() + " holds no optimizer state to resume from");
    weights = std::move(ck.weights);
    resume = std::move(ck.optimizer);
    log_line("resuming fine-tuning at step " + std::to_string(resume->step));
  } else {
    c = resolve_config(o, StepsMean::finetune, checkpoint_base(o.checkpoint));
    auto ck = load_checkpoint<float>(o.checkpoint, c.model);
    weights = std::move(ck.weights);
    // Fresh adapters on the base weights only.
    bool has_adapters = false;
    weights.visit([&](const std::string&, const Tensor<float>&, bool a) { has_adapters |= a; });
    if (has_adapters) throw UsageError(o.checkpoint + " already carries adapters; pass a pretrained base");
    add_adapters(weights, c);
    fs::create_directories(out);
    if (!o.resume) fs::remove(out / "metrics.log");
  }
  ProgressLog log(out / "metrics.log", c.train.log_interval, c.train.lr);
  auto run = finetune(c, std::move(weights), std::move(resume), [&](std::uint64_t s, double l) { log.record(s, l); },
                      env_threads());
  save_checkpoint(ckpt, run.weights, c.model, TrainScope::adapters, &run.optimizer, config_to_json(c));
  write_text(out / "config.json", config_to_json(c));
  log_line("fine-tuned to step " + std::to_string(run.optimizer.step) + ", checkpoint " + ckpt.string());
  return kOk;
}

int cmd_infer(const Options& o) {
  const auto c = resolve_config(o, StepsMean::sample, checkpoint_base(o.checkpoint));
  const auto ck = load_checkpoint<float>(o.checkpoint, c.model);
  if (o.cond.empty()) throw UsageError("--cond is required");
  if (o.prompt.empty() == o.prompt_file.empty()) throw UsageError("give exactly one of --prompt and --prompt-file");
  std::string prompt = o.prompt;
  if (!o.prompt_file.empty()) {
    prompt = read_text(o.prompt_file);
    while (!prompt.empty() && (prompt.back() == '\n' || prompt.back() == '\r')) prompt.pop_back();
  }
  if (!fs::exists(o.cond)) throw UsageError("condition image not found: " + o.cond);
  const Image cond = read_ppm(o.cond);
  GenerateSettings gs;
  gs.steps = c.sample.steps;
  gs.seed = derive_seed(c.seed, "infer");
  gs.normalize_condition = c.data.normalize_condition;
  const std::optional<std::string> cp = o.cond_prompt.empty() ? std::nullopt : std::optional<std::string>(o.cond_prompt);
  const auto img = generate_image<float>(cond, prompt, cp, ck.weights, c.model, gs, LatentCodec(c.model.channels, 4));
  const fs::path out = o.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_ppm(out, img);
  log_line("wrote " + out.string());
  return kOk;
}

int cmd_eval(const Options& o) {
  auto c = resolve_config(o, StepsMean::sample, checkpoint_base(o.checkpoint));
  if (o.samples) c.eval.samples = *o.samples;
  if (o.vl) c.eval.vl = true;
  const auto ck = load_checkpoint<float>(o.checkpoint, c.model);
  std::optional<VlEndpoint> vl;
  if (c.eval.vl) vl = VlEndpoint{c.eval.vl_host, c.eval.vl_port, c.eval.vl_path, c.eval.vl_timeout};
  const auto result = evaluate(c, ck.weights, c.eval.samples, env_threads(), vl);
  const fs::path out = o.out;
  write_eval_outputs(out, result.records);
  fs::create_directories(out / "images");
  for (std::size_t i = 0; i < result.generated.size(); ++i) {
    write_ppm(out / "images" / (index_name(i) + "_gen.ppm"), result.generated[i]);
    write_ppm(out / "images" / (index_name(i) + "_cond.ppm"), result.conditions[i]);
  }
  write_text(out / "config.json", config_to_json(c));
  std::cout << eval_summary_csv(result.records);
  return kOk;
}

int cmd_ablate(const Options& o) {
  const auto c = resolve_config(o, StepsMean::both);
  AblationOptions opts;
  opts.out = o.out;
  opts.threads = env_threads();
  opts.progress = log_line;
  fs::create_directories(opts.out);
  write_text(opts.out / "config.json", config_to_json(c));
  const auto cells = run_ablation(c, opts);
  std::cout << ablation_table_markdown(cells);
  return kOk;
}

int cmd_export_transition(const Options& o) {
  const auto c = resolve_config(o, StepsMean::none);
  Image cond, target;
  if (!o.cond.empty() || !o.target.empty()) {
    if (o.cond.empty() || o.target.empty()) throw UsageError("--cond and --target go together");
    cond = read_ppm(o.cond);
    target = read_ppm(o.target);
  } else {
    const auto pair = eval_stream(c, 1).at(0);
    cond = pair.condition;
    target = pair.target;
  }
  const auto seq = build_transition(c.data.transition, cond, target, c.schedule());
  const fs::path out = o.out;
  fs::create_directories(out);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) write_ppm(out / ("frame_" + index_name(i) + ".ppm"), seq.frames[i]);
  log_line("wrote " + std::to_string(seq.frames.size()) + " frames to " + out.string());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dractrl: controllable generation with a toy video diffusion transformer"};
  app.require_subcommand(1);
  Options o;

  auto* datagen = app.add_subcommand("datagen", "Write task pairs (and optional pretraining videos) as PPM");
  add_common(datagen, o, StepsMean::none);
  datagen->add_option("--count", o.count, "Number of pairs (default data.count)");
  datagen->add_option("--videos", o.videos, "Also write this many pretraining videos");

  auto* pre = app.add_subcommand("pretrain", "Train base weights on procedural videos");
  add_common(pre, o, StepsMean::pretrain);
  pre->add_flag("--resume", o.resume, "Continue from <out>/checkpoint.bin");

  auto* fine = app.add_subcommand("finetune", "Train adapters on a task");
  add_common(fine, o, StepsMean::finetune);
  fine->add_option("--checkpoint", o.checkpoint, "Pretrained base checkpoint");
  fine->add_flag("--resume", o.resume, "Continue from <out>/checkpoint.bin");

  auto* infer = app.add_subcommand("infer", "Generate one image");
  add_common(infer, o, StepsMean::sample);
  infer->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  infer->add_option("--cond", o.cond, "Condition image (PPM)");
  infer->add_option("--prompt", o.prompt, "Target prompt");
  infer->add_option("--prompt-file", o.prompt_file, "File holding the target prompt");
  infer->add_option("--cond-prompt", o.cond_prompt, "Condition prompt");

  auto* eval = app.add_subcommand("eval", "Score held-out samples");
  add_common(eval, o, StepsMean::sample);
  eval->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  eval->add_option("--samples", o.samples, "Held-out samples (default eval.samples)");
  eval->add_flag("--vl", o.vl, "Query the VL scoring endpoint");

  auto* ablate = app.add_subcommand("ablate", "Transition x frames x mode sweep");
  add_common(ablate, o, StepsMean::both);

  auto* exp = app.add_subcommand("export-transition", "Write the mixup frames of one pair");
  add_common(exp, o, StepsMean::none);
  exp->add_option("--cond", o.cond, "Condition image (PPM)");
  exp->add_option("--target", o.target, "Target image (PPM)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (datagen->parsed()) return cmd_datagen(o);
    if (pre->parsed()) return cmd_pretrain(o);
    if (fine->parsed()) return cmd_finetune(o);
    if (infer->parsed()) return cmd_infer(o);
    if (eval->parsed()) return cmd_eval(o);
    if (ablate->parsed()) return cmd_ablate(o);
    if (exp->parsed()) return cmd_export_transition(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
