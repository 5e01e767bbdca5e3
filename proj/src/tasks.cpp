#include "dractrl/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "dractrl/error.hpp"
#include "dractrl/vocab.hpp"

namespace dractrl {

std::array<float, 3> palette_color(int index) {
  static constexpr std::array<std::array<float, 3>, kPaletteSize> kPalette{{
      {0.90f, 0.15f, 0.15f},  // red
      {0.15f, 0.75f, 0.25f},  // green
      {0.15f, 0.25f, 0.90f},  // blue
      {0.95f, 0.85f, 0.15f},  // yellow
      {0.15f, 0.80f, 0.85f},  // cyan
      {0.85f, 0.20f, 0.80f},  // magenta
      {0.95f, 0.95f, 0.95f},  // white
      {0.05f, 0.05f, 0.05f},  // black
  }};
  if (index < 0 || index >= kPaletteSize) throw DomainError("palette index " + std::to_string(index));
  return kPalette[static_cast<std::size_t>(index)];
}

std::string to_string(ShapeKind s) { return grammar_shapes()[static_cast<std::size_t>(s)]; }

std::string describe_object(const SceneObject& o) {
  return "a " + grammar_colors()[static_cast<std::size_t>(o.color)] + " " + to_string(o.shape);
}

std::string scene_prompt(const Scene& s) {
  std::string p;
  for (std::size_t i = 0; i < s.objects.size(); ++i) p += (i ? " and " : "") + describe_object(s.objects[i]);
  return p + " on a " + grammar_colors()[static_cast<std::size_t>(s.background)] + " background";
}

namespace {

bool covers(const SceneObject& o, double px, double py, double time) {
  const double cx = o.cx + o.vx * time, cy = o.cy + o.vy * time, s = o.size;
  const double dx = px - cx, dy = py - cy;
  switch (o.shape) {
    case ShapeKind::circle: return dx * dx + dy * dy <= s * s;
    case ShapeKind::square: return std::abs(dx) <= s && std::abs(dy) <= s;
    case ShapeKind::triangle:
      // Apex up at (cx, cy - s), base from (cx - s, cy + s) to (cx + s, cy + s).
      return dy >= -s && dy <= s && std::abs(dx) <= (dy + s) / 2.0;
  }
  return false;
}

SceneObject random_object(Rng& rng, std::size_t resolution, int background, double max_speed) {
  SceneObject o;
  o.shape = static_cast<ShapeKind>(rng.uniform_int(0, 2));
  o.color = static_cast<int>(rng.uniform_int(0, kPaletteSize - 2));
  if (o.color >= background) ++o.color;
  const double res = static_cast<double>(resolution);
  o.size = res * (0.12 + 0.18 * rng.uniform());
  o.cx = o.size + (res - 2 * o.size) * rng.uniform();
  o.cy = o.size + (res - 2 * o.size) * rng.uniform();
  o.vx = max_speed * (2 * rng.uniform() - 1);
  o.vy = max_speed * (2 * rng.uniform() - 1);
  return o;
}

Scene random_layout(Rng& rng, std::size_t resolution, double max_speed) {
  if (resolution == 0 || resolution % 4) {
    throw DimensionError("scene resolution " + std::to_string(resolution) + " is not a multiple of 4");
  }
  Scene s;
  s.background = static_cast<int>(rng.uniform_int(0, kPaletteSize - 1));
  const auto n = rng.uniform_int(1, 3);
  for (std::int64_t i = 0; i < n; ++i) s.objects.push_back(random_object(rng, resolution, s.background, max_speed));
  std::stable_sort(s.objects.begin(), s.objects.end(),
                   [](const SceneObject& a, const SceneObject& b) { return a.size < b.size; });
  s.prompt = scene_prompt(s);
  return s;
}

}  // namespace

Scene gen_scene_layout(Rng& rng, std::size_t resolution) {
  auto s = random_layout(rng, resolution, 0.0);
  for (auto& o : s.objects) o.vx = o.vy = 0.0;
  return s;
}

Image render_scene(std::size_t resolution, const std::array<float, 3>& background,
                   const std::vector<SceneObject>& objects, double time, const std::vector<float>* shade) {
  if (shade && shade->size() != objects.size()) throw DimensionError("render_scene: one shade per object");
  constexpr int kSub = 4;
  Image img(resolution, resolution);
  for (std::size_t y = 0; y < resolution; ++y)
    for (std::size_t x = 0; x < resolution; ++x) {
      std::array<double, 3> acc{0, 0, 0};
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / kSub;
          const double py = static_cast<double>(y) + (sy + 0.5) / kSub;
          std::array<float, 3> c = background;
          for (std::size_t i = 0; i < objects.size(); ++i)
            if (covers(objects[i], px, py, time)) {
              c = shade ? std::array<float, 3>{(*shade)[i], (*shade)[i], (*shade)[i]} : palette_color(objects[i].color);
            }
          for (int ch = 0; ch < 3; ++ch) acc[static_cast<std::size_t>(ch)] += c[static_cast<std::size_t>(ch)];
        }
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = static_cast<float>(acc[ch] / (kSub * kSub));
    }
  return img;
}

Scene gen_scene(Rng& rng, std::size_t resolution) {
  auto s = gen_scene_layout(rng, resolution);
  s.image = render_scene(resolution, palette_color(s.background), s.objects);
  return s;
}

std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::colorize: return "colorize";
    case TaskKind::deblur: return "deblur";
    case TaskKind::inpaint_outpaint: return "inpaint_outpaint";
    case TaskKind::edges: return "edges";
    case TaskKind::superres: return "superres";
    case TaskKind::depth_predict: return "depth_predict";
    case TaskKind::subject_toy: return "subject_toy";
  }
  return "?";
}

const std::vector<TaskKind>& all_tasks() {
  static const std::vector<TaskKind> t{TaskKind::colorize, TaskKind::deblur,        TaskKind::inpaint_outpaint,
                                       TaskKind::edges,    TaskKind::superres,      TaskKind::depth_predict,
                                       TaskKind::subject_toy};
  return t;
}

TaskKind parse_task(std::string_view name) {
  for (auto t : all_tasks())
    if (to_string(t) == name) return t;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

bool task_spatially_aligned(TaskKind task) { return task != TaskKind::subject_toy; }

Image gaussian_blur(const Image& img, int radius) {
  if (radius < 1) throw DomainError("gaussian_blur: radius must be >= 1");
  const double sigma = radius / 2.0;
  const int half = 2 * radius;
  std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
  double norm = 0;
  for (int i = -half; i <= half; ++i) norm += kernel[static_cast<std::size_t>(i + half)] = std::exp(-i * i / (2 * sigma * sigma));
  for (auto& k : kernel) k /= norm;

  const auto h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  auto clampi = [](long v, long hi) { return std::clamp(v, 0L, hi - 1); };
  std::vector<double> tmp(img.pixels.size());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -half; i <= half; ++i)
          acc += kernel[static_cast<std::size_t>(i + half)] *
                 img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(clampi(x + i, w)), c);
        tmp[(static_cast<std::size_t>(y * w + x)) * 3 + c] = acc;
      }
  Image out(img.height, img.width);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -half; i <= half; ++i)
          acc += kernel[static_cast<std::size_t>(i + half)] * tmp[static_cast<std::size_t>(clampi(y + i, h) * w + x) * 3 + c];
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = static_cast<float>(acc);
      }
  return out;
}

Image sobel_magnitude(const Image& img) {
  const auto h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  auto g = [&](long y, long x) {
    y = std::clamp(y, 0L, h - 1);
    x = std::clamp(x, 0L, w - 1);
    const auto yy = static_cast<std::size_t>(y), xx = static_cast<std::size_t>(x);
    return (static_cast<double>(img.at(yy, xx, 0)) + img.at(yy, xx, 1) + img.at(yy, xx, 2)) / 3.0;
  };
  Image out(img.height, img.width);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const double gx = (g(y - 1, x + 1) + 2 * g(y, x + 1) + g(y + 1, x + 1)) -
                        (g(y - 1, x - 1) + 2 * g(y, x - 1) + g(y + 1, x - 1));
      const double gy = (g(y + 1, x - 1) + 2 * g(y + 1, x) + g(y + 1, x + 1)) -
                        (g(y - 1, x - 1) + 2 * g(y - 1, x) + g(y - 1, x + 1));
      const auto m = static_cast<float>(std::sqrt(gx * gx + gy * gy));
      for (std::size_t c = 0; c < 3; ++c) out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = m;
    }
  return out;
}

Image edge_map(const Image& img, double threshold) {
  auto m = sobel_magnitude(img);
  for (auto& v : m.pixels) v = v > threshold ? 1.0f : 0.0f;
  return m;
}

Image box_downsample(const Image& img, std::size_t factor) {
  if (factor == 0 || img.height % factor || img.width % factor) {
    throw DimensionError("box_downsample: " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " not divisible by " + std::to_string(factor));
  }
  Image out(img.height / factor, img.width / factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx) acc += img.at(y * factor + dy, x * factor + dx, c);
        out.at(y, x, c) = static_cast<float>(acc / static_cast<double>(factor * factor));
      }
  return out;
}

Image nearest_upsample(const Image& img, std::size_t factor) {
  Image out(img.height * factor, img.width * factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y / factor, x / factor, c);
  return out;
}

Image depth_proxy(const Scene& scene) {
  // Objects are sorted by size, so the last one has rank 1.
  const std::size_t n = scene.objects.size();
  std::vector<float> shade(n);
  for (std::size_t i = 0; i < n; ++i) shade[i] = 1.0f / static_cast<float>(n - i);
  return normalize_dark_colors(render_scene(scene.image.height, {0.0f, 0.0f, 0.0f}, scene.objects, 0.0, &shade));
}

Image subject_reference(const Scene& scene) {
  if (scene.objects.empty()) throw DomainError("subject_reference: scene has no objects");
  return render_scene(scene.image.height, {0.5f, 0.5f, 0.5f}, {scene.objects.front()});
}

ConditionDraw draw_condition(const Scene& scene, const TaskSpec& task, Rng& rng) {
  ConditionDraw d;
  if (task.kind == TaskKind::deblur) {
    if (task.blur_min < 1 || task.blur_max < task.blur_min) throw ConfigError("deblur: invalid radius range");
    d.blur_radius = static_cast<int>(rng.uniform_int(task.blur_min, task.blur_max));
  } else if (task.kind == TaskKind::inpaint_outpaint) {
    const auto h = static_cast<std::int64_t>(scene.image.height), w = static_cast<std::int64_t>(scene.image.width);
    const auto rw = rng.uniform_int(std::max<std::int64_t>(1, w / 4), std::max<std::int64_t>(1, w / 2));
    const auto rh = rng.uniform_int(std::max<std::int64_t>(1, h / 4), std::max<std::int64_t>(1, h / 2));
    const auto x0 = rng.uniform_int(0, w - rw), y0 = rng.uniform_int(0, h - rh);
    d.rect_x0 = static_cast<std::size_t>(x0);
    d.rect_y0 = static_cast<std::size_t>(y0);
    d.rect_x1 = static_cast<std::size_t>(x0 + rw);
    d.rect_y1 = static_cast<std::size_t>(y0 + rh);
    d.mask_inside = rng.bernoulli(task.mask_probability);
  }
  return d;
}

Image apply_condition(const Scene& scene, const TaskSpec& task, const ConditionDraw& draw) {
  const Image& img = scene.image;
  switch (task.kind) {
    case TaskKind::colorize: return grayscale(img);
    case TaskKind::deblur: return gaussian_blur(img, draw.blur_radius);
    case TaskKind::inpaint_outpaint: {
      Image out = img;
      for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
          const bool in = x >= draw.rect_x0 && x < draw.rect_x1 && y >= draw.rect_y0 && y < draw.rect_y1;
          if (in == draw.mask_inside)
            for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = 0.0f;
        }
      return normalize_dark_colors(out);
    }
    case TaskKind::edges: return normalize_dark_colors(edge_map(img, task.edge_threshold));
    case TaskKind::superres: return nearest_upsample(box_downsample(img, task.downsample), task.downsample);
    case TaskKind::depth_predict: return img;
    case TaskKind::subject_toy: return subject_reference(scene);
  }
  throw ConfigError("unknown task kind");
}

Condition make_condition(const Scene& scene, const TaskSpec& task, Rng& rng) {
  auto d = draw_condition(scene, task, rng);
  return {apply_condition(scene, task, d), d};
}

Image task_target(const Scene& scene, TaskKind task) {
  return task == TaskKind::depth_predict ? depth_proxy(scene) : scene.image;
}

std::string task_prompt(const Scene& scene, TaskKind task) {
  return task == TaskKind::depth_predict ? std::string(kDepthWord) + " " + scene.prompt : scene.prompt;
}

std::optional<std::string> task_cond_prompt(const Scene& scene, TaskKind task) {
  if (task != TaskKind::subject_toy) return std::nullopt;
  return describe_object(scene.objects.front());
}

PretrainVideo gen_pretrain_video(Rng& rng, std::size_t frames, std::size_t resolution, const PretrainOptions& opts) {
  if (frames < 5 || (frames - 1) % 4) {
    throw LayoutError("pretraining video needs 4T + 1 frames (T >= 1), got " + std::to_string(frames));
  }
  PretrainVideo v;
  const auto a = random_layout(rng, resolution, opts.max_speed);
  v.prompt = a.prompt;
  v.faded = rng.bernoulli(opts.fade_probability);
  const auto bg_a = palette_color(a.background);
  if (!v.faded) {
    for (std::size_t f = 0; f < frames; ++f) v.frames.push_back(render_scene(resolution, bg_a, a.objects, double(f)));
    return v;
  }
  const auto b = random_layout(rng, resolution, opts.max_speed);
  const auto bg_b = palette_color(b.background);
  const double start = static_cast<double>(frames / 3), end = static_cast<double>(2 * frames / 3);
  for (std::size_t f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f);
    v.scene_a.push_back(render_scene(resolution, bg_a, a.objects, t));
    v.scene_b.push_back(render_scene(resolution, bg_b, b.objects, t));
    v.alphas.push_back(std::clamp((t - start) / (end - start), 0.0, 1.0));
    v.frames.push_back(mixup_frame(v.scene_a.back(), v.scene_b.back(), v.alphas.back(), opts.gamma));
  }
  return v;
}

TrainingPair build_training_pair(const Scene& scene, const TaskSpec& task, const MixupSchedule& schedule, Rng& rng,
                                 TransitionKind transition) {
  TrainingPair p;
  p.task = task.kind;
  p.scene = scene;
  auto cond = make_condition(scene, task, rng);
  p.condition = std::move(cond.image);
  p.draw = cond.draw;
  p.target = task_target(scene, task.kind);
  p.prompt = task_prompt(scene, task.kind);
  p.cond_prompt = task_cond_prompt(scene, task.kind);
  p.sequence = build_transition(transition, p.condition, p.target, schedule);
  return p;
}

DatasetStream::DatasetStream(TaskSpec task, std::uint64_t seed, std::size_t count, std::size_t resolution,
                             MixupSchedule schedule, TransitionKind transition)
    : task_(task), seed_(seed), count_(count), resolution_(resolution), schedule_(schedule), transition_(transition) {
  if (count == 0) throw DomainError("dataset stream needs count >= 1");
  schedule_.validate();
}

TrainingPair DatasetStream::at(std::size_t i) const {
  if (i >= count_) throw DomainError("dataset index " + std::to_string(i) + " out of range");
  Rng rng(seed_, stream_id({i}));
  auto scene = gen_scene(rng, resolution_);
  return build_training_pair(scene, task_, schedule_, rng, transition_);
}

}  // namespace dractrl
