#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dractrl/image.hpp"
#include "dractrl/mixup.hpp"
#include "dractrl/numerics/rng.hpp"

namespace dractrl {

enum class ShapeKind { circle, square, triangle };

// RGB of palette entry i, in the order of grammar_colors().
std::array<float, 3> palette_color(int index);
inline constexpr int kPaletteSize = 8;

struct SceneObject {
  ShapeKind shape = ShapeKind::circle;
  int color = 0;
  double cx = 0;  // centre, pixels
  double cy = 0;
  double size = 0;  // radius / half side, pixels
  double vx = 0;  // velocity, pixels per frame (pretraining videos)
  double vy = 0;
};

// Objects are stored and drawn from smallest to largest, so larger shapes
// end up on top.
struct Scene {
  Image image;
  std::string prompt;
  int background = 0;
  std::vector<SceneObject> objects;
};

std::string to_string(ShapeKind s);
std::string describe_object(const SceneObject& o);  // "a red circle"
std::string scene_prompt(const Scene& s);

// 1-3 anti-aliased shapes on a solid background; resolution must be a
// multiple of 4.
Scene gen_scene(Rng& rng, std::size_t resolution);

// Objects and background only, no raster.
Scene gen_scene_layout(Rng& rng, std::size_t resolution);

// Rasterizes `objects` at positions advanced by `time` frames, 4x4
// supersampled. With `shade`, object i is drawn in the flat gray shade[i]
// instead of its palette colour.
Image render_scene(std::size_t resolution, const std::array<float, 3>& background,
                   const std::vector<SceneObject>& objects, double time = 0.0,
                   const std::vector<float>* shade = nullptr);

enum class TaskKind { colorize, deblur, inpaint_outpaint, edges, superres, depth_predict, subject_toy };

std::string to_string(TaskKind t);
TaskKind parse_task(std::string_view name);
const std::vector<TaskKind>& all_tasks();

struct TaskSpec {
  TaskKind kind = TaskKind::colorize;
  int blur_min = 1;
  int blur_max = 10;
  double mask_probability = 0.5;
  std::size_t downsample = 4;
  double edge_threshold = 0.1;
  bool normalize_condition = false;  // normalize again at inference
};

// Random choices behind one condition; replaying them reproduces it.
struct ConditionDraw {
  int blur_radius = 0;
  bool mask_inside = false;
  std::size_t rect_x0 = 0, rect_y0 = 0, rect_x1 = 0, rect_y1 = 0;  // half-open
};

struct Condition {
  Image image;
  ConditionDraw draw;
};

ConditionDraw draw_condition(const Scene& scene, const TaskSpec& task, Rng& rng);
Image apply_condition(const Scene& scene, const TaskSpec& task, const ConditionDraw& draw);
Condition make_condition(const Scene& scene, const TaskSpec& task, Rng& rng);

// Image the model should produce: the depth proxy for depth_predict, the
// scene itself otherwise.
Image task_target(const Scene& scene, TaskKind task);
std::string task_prompt(const Scene& scene, TaskKind task);
// Only subject_toy carries a condition prompt.
std::optional<std::string> task_cond_prompt(const Scene& scene, TaskKind task);
bool task_spatially_aligned(TaskKind task);

// Condition operators.
Image gaussian_blur(const Image& img, int radius);
Image sobel_magnitude(const Image& img);                   // on the grayscale image, one value per pixel x3
Image edge_map(const Image& img, double threshold = 0.1);  // binary {0, 1}
Image box_downsample(const Image& img, std::size_t factor);
Image nearest_upsample(const Image& img, std::size_t factor);
// Background darkest, shapes shaded 1/rank by size (largest brightest),
// then dark-colour normalization.
Image depth_proxy(const Scene& scene);
// The first object alone on mid-gray.
Image subject_reference(const Scene& scene);

struct PretrainOptions {
  double max_speed = 0.75;  // pixels per frame
  double fade_probability = 0.3;
  double gamma = 2.2;
};

struct PretrainVideo {
  std::vector<Image> frames;
  std::string prompt;
  bool faded = false;
  // With a fade: both scenes rendered at every frame and the per-frame
  // blend position (0 before the middle third, 1 after it).
  std::vector<Image> scene_a;
  std::vector<Image> scene_b;
  std::vector<double> alphas;
};

// Shapes moving at constant velocity; with probability fade_probability a
// fade into a second scene fills the middle third. frames must be 4T + 1.
PretrainVideo gen_pretrain_video(Rng& rng, std::size_t frames, std::size_t resolution, const PretrainOptions& opts = {});

struct TrainingPair {
  TaskKind task = TaskKind::colorize;
  Scene scene;
  Image condition;
  Image target;
  ConditionDraw draw;
  std::string prompt;
  std::optional<std::string> cond_prompt;
  FrameSequence sequence;
};

TrainingPair build_training_pair(const Scene& scene, const TaskSpec& task, const MixupSchedule& schedule, Rng& rng,
                                 TransitionKind transition = TransitionKind::fade);

// Deterministic stream: element i depends only on (seed, i).
class DatasetStream {
 public:
  DatasetStream(TaskSpec task, std::uint64_t seed, std::size_t count, std::size_t resolution = 32,
                MixupSchedule schedule = {}, TransitionKind transition = TransitionKind::fade);

  std::size_t size() const { return count_; }
  TrainingPair at(std::size_t i) const;

  class iterator {
   public:
    iterator(const DatasetStream* s, std::size_t i) : s_(s), i_(i) {}
    TrainingPair operator*() const { return s_->at(i_); }
    iterator& operator++() {
      ++i_;
      return *this;
    }
    bool operator==(const iterator& o) const { return i_ == o.i_; }

   private:
    const DatasetStream* s_;
    std::size_t i_;
  };
  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, count_}; }

 private:
  TaskSpec task_;
  std::uint64_t seed_;
  std::size_t count_;
  std::size_t resolution_;
  MixupSchedule schedule_;
  TransitionKind transition_;
};

}  // namespace dractrl
