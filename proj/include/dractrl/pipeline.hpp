#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dractrl/codec.hpp"
#include "dractrl/config.hpp"
#include "dractrl/flow.hpp"
#include "dractrl/metrics.hpp"
#include "dractrl/model.hpp"
#include "dractrl/tasks.hpp"

namespace dractrl {

// dra: the mixup sequence through encode_transition. Two-frame modes: the
// condition and target encoded as a two-latent-frame video.
TrainingExample make_example(const TrainingPair& pair, const ModelConfig& config, const LatentCodec& codec);
TrainingExample make_pretrain_example(const PretrainVideo& video, const LatentCodec& codec);

// Pretraining video i of step s; 4 * (K + 1) + 1 pixel frames for the
// configured K (two-frame modes: 5 frames, two latents).
PretrainVideo pretrain_video(const RunConfig& config, std::uint64_t step, std::size_t index);
// Fine-tuning pair i of step s, drawn from the training split.
TrainingPair finetune_pair(const RunConfig& config, std::uint64_t step, std::size_t index);
// Held-out split, disjoint seed from training.
DatasetStream eval_stream(const RunConfig& config, std::size_t count);

// One line per interval, "step=<n> loss=<mean over interval> lr=<lr>
// wall=<seconds>", opened in append mode and flushed per line.
class ProgressLog {
 public:
  ProgressLog() = default;
  ProgressLog(const std::filesystem::path& path, std::size_t interval, double lr);
  void record(std::uint64_t step, double loss);  // step is 1-based
  std::size_t lines_written() const { return lines_; }

 private:
  std::ofstream out_;
  std::size_t interval_ = 1;
  double lr_ = 0;
  double sum_ = 0;
  std::size_t count_ = 0;
  std::size_t lines_ = 0;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct TrainRun {
  ModelWeights<float> weights;
  OptimizerState<float> optimizer;
  std::vector<double> losses;  // one per step run by this call
};

using StepCallback = std::function<void(std::uint64_t step, double loss)>;

// Number of worker threads from DRACTRL_THREADS (default 1).
unsigned env_threads();

// Fresh base weights from config.seed.
ModelWeights<float> initial_weights(const RunConfig& config);

// Base-weight training on procedural videos with uniform loss weights,
// from optimizer.step up to train.pretrain_steps. Starts from fresh weights
// and optimizer unless `resume` is given.
TrainRun pretrain(const RunConfig& config, std::optional<TrainRun> resume = std::nullopt,
                  const StepCallback& on_step = {}, unsigned threads = 1);

// Attaches fresh adapters seeded from config.seed.
void add_adapters(ModelWeights<float>& weights, const RunConfig& config);

// Adapter-only training on the configured task. `base` must already carry
// adapters (add_adapters) or a resumed optimizer.
TrainRun finetune(const RunConfig& config, ModelWeights<float> base, std::optional<OptimizerState<float>> resume = std::nullopt,
                  const StepCallback& on_step = {}, unsigned threads = 1);

struct EvalResult {
  std::vector<EvalRecord> records;
  std::vector<Image> generated;
  std::vector<Image> conditions;
};

// Generates and scores `samples` held-out pairs; sample i depends only on
// (config, i), so worker count does not change results.
EvalResult evaluate(const RunConfig& config, const ModelWeights<float>& weights, std::size_t samples,
                    unsigned threads = 1, const std::optional<VlEndpoint>& vl = std::nullopt);

double mean_controllability(const EvalResult& r);

struct AblationCell {
  TransitionKind transition = TransitionKind::fade;
  int frames = 8;  // transition pixel frames, 4K
  ModelMode mode = ModelMode::dra;
  double final_loss = 0;  // mean of the last min(100, steps) fine-tuning losses
  double controllability = 0;
  double ssim = 0;
  double mse = 0;
  std::size_t samples = 0;
};

// {fade, slide} x {4, 8, 12} x {dra, two_frame_t2v, two_frame_i2v}.
std::vector<AblationCell> ablation_grid();
std::string ablation_table_csv(const std::vector<AblationCell>& cells);
std::string ablation_table_markdown(const std::vector<AblationCell>& cells);

struct AblationOptions {
  std::filesystem::path out;  // empty: nothing written
  unsigned threads = 1;
  std::function<void(const std::string&)> progress;
};

// One pretrained base (config.model.k, config.train.pretrain_steps), then
// per cell: fresh adapters, fine-tuning and evaluation of config.eval.samples
// held-out pairs. With `out`, each cell writes cells/<name>/{metrics.log,
// records.jsonl, summary.csv} and the tables go to ablation.{csv,md}.
std::vector<AblationCell> run_ablation(const RunConfig& config, const AblationOptions& options = {});

}  // namespace dractrl
