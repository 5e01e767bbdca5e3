#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dractrl/checkpoint.hpp"
#include "dractrl/codec.hpp"
#include "dractrl/config.hpp"
#include "dractrl/error.hpp"
#include "dractrl/layout.hpp"
#include "dractrl/metrics.hpp"
#include "dractrl/mixup.hpp"
#include "dractrl/pipeline.hpp"
#include "dractrl/vocab.hpp"

namespace py = pybind11;
using namespace dractrl;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("expected an (H, W, 3) array");
  Image img(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

FloatArray from_image(const Image& img) {
  FloatArray out({img.height, img.width, std::size_t{3}});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

FloatArray from_latent(const LatentFrame& f) {
  FloatArray out({f.channels, f.height, f.width});
  std::copy(f.data.begin(), f.data.end(), out.mutable_data());
  return out;
}

LatentFrame to_latent(const FloatArray& a) {
  if (a.ndim() != 3) throw DimensionError("expected a (C, h, w) array");
  LatentFrame f(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                static_cast<std::size_t>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), f.data.begin());
  return f;
}

// Base weights plus optional adapters, with the run config they belong to.
struct Model {
  RunConfig config;
  ModelWeights<float> weights;

  static Model create(const std::string& config_json) {
    Model m;
    m.config = parse_config(config_json);
    m.config.validate();
    m.weights = initial_weights(m.config);
    return m;
  }

  static Model load(const std::filesystem::path& path) {
    auto ck = load_checkpoint<float>(path);
    Model m;
    m.config = parse_config(ck.run_config);
    m.config.model = ck.config;
    m.weights = std::move(ck.weights);
    return m;
  }

  void save(const std::filesystem::path& path) const {
    save_checkpoint<float>(path, weights, config.model, TrainScope::none, nullptr, config_to_json(config));
  }

  bool has_adapters() const {
    bool any = false;
    weights.visit([&](const std::string&, const Tensor<float>&, bool a) { any |= a; });
    return any;
  }

  FloatArray generate(const FloatArray& cond, const std::string& prompt, const std::optional<std::string>& cond_prompt,
                      int steps, std::uint64_t seed) const {
    GenerateSettings gs;
    gs.steps = steps;
    gs.seed = seed;
    gs.normalize_condition = config.data.normalize_condition;
    Image out;
    {
      py::gil_scoped_release release;
      out = generate_image<float>(to_image(cond), prompt, cond_prompt, weights, config.model, gs,
                                  LatentCodec(config.model.channels, 4));
    }
    return from_image(out);
  }
};

py::dict pair_dict(const TrainingPair& p) {
  py::dict d;
  d["task"] = to_string(p.task);
  d["condition"] = from_image(p.condition);
  d["target"] = from_image(p.target);
  d["prompt"] = p.prompt;
  d["cond_prompt"] = p.cond_prompt;
  py::list frames;
  for (const auto& f : p.sequence.frames) frames.append(from_image(f));
  d["frames"] = frames;
  return d;
}

// Layout-only config for a given latent frame count.
ModelConfig layout_config(std::size_t frames, std::size_t longest_prompt) {
  if (frames < 2) throw DimensionError("need at least two latent frames");
  ModelConfig c;
  c.mode = frames == 2 ? ModelMode::two_frame_i2v : ModelMode::dra;
  c.k = frames == 2 ? 2 : static_cast<int>(frames) - 2;
  c.max_prompt_len = std::max(c.max_prompt_len, longest_prompt);
  return c;
}

py::dict report_dict(const ControllabilityReport& r) {
  py::dict d;
  d["task"] = to_string(r.task);
  d["metric"] = r.metric;
  d["controllability"] = r.controllability;
  d["ssim"] = r.ssim;
  d["mse"] = r.mse;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Toy diffusion-transformer controllable generation";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);

  m.def("smoothstep_beta", &smoothstep_beta, py::arg("alpha"));
  m.def("mixup_value", &mixup_value, py::arg("f0"), py::arg("f1"), py::arg("alpha"), py::arg("gamma") = 2.2);
  m.def("loss_weight", &loss_weight, py::arg("k"), py::arg("K"));
  m.def(
      "mixup_frame",
      [](const FloatArray& a, const FloatArray& b, double alpha, double gamma) {
        return from_image(mixup_frame(to_image(a), to_image(b), alpha, gamma));
      },
      py::arg("f0"), py::arg("f1"), py::arg("alpha"), py::arg("gamma") = 2.2);
  m.def(
      "build_transition",
      [](const std::string& kind, const FloatArray& cond, const FloatArray& target, int k, double gamma) {
        const auto seq = build_transition(parse_transition(kind), to_image(cond), to_image(target), MixupSchedule{k, gamma});
        py::list frames;
        for (const auto& f : seq.frames) frames.append(from_image(f));
        return py::make_tuple(frames, seq.alphas);
      },
      py::arg("kind"), py::arg("cond"), py::arg("target"), py::arg("k") = 2, py::arg("gamma") = 2.2,
      "Returns (frames, alphas) for a fade or slide transition.");

  m.def(
      "encode",
      [](const FloatArray& img, std::size_t channels) { return from_latent(LatentCodec(channels, 4).encode(to_image(img))); },
      py::arg("image"), py::arg("channels") = 16);
  m.def("decode", [](const FloatArray& z) { return from_image(LatentCodec(static_cast<std::size_t>(z.shape(0)), 4).decode(to_latent(z))); },
        py::arg("latent"));

  m.def("tokenize", [](const std::string& text) { return tokenize_prompt(text); }, py::arg("text"));
  m.def(
      "fspe_positions",
      [](std::size_t frames, std::size_t h, std::size_t w, std::size_t prompt_len, int delta) {
        const auto c = layout_config(frames, prompt_len);
        const std::vector<std::int32_t> tp(prompt_len, kUnkId);
        return fspe_positions(build_token_layout(c, frames, h, w, tp), delta);
      },
      py::arg("frames"), py::arg("height"), py::arg("width"), py::arg("prompt_len"), py::arg("delta") = 12);
  m.def(
      "attention_mask",
      [](std::size_t frames, std::size_t h, std::size_t w, std::size_t prompt_len, std::size_t cond_prompt_len) {
        const auto c = layout_config(frames, std::max(prompt_len, cond_prompt_len));
        const std::vector<std::int32_t> tp(prompt_len, kUnkId), cp(cond_prompt_len, kUnkId);
        const auto layout = cond_prompt_len ? build_token_layout(c, frames, h, w, tp, std::span<const std::int32_t>(cp))
                                            : build_token_layout(c, frames, h, w, tp);
        const auto mask = build_attention_mask(layout);
        py::array_t<bool> out({mask.size, mask.size});
        for (std::size_t i = 0; i < mask.size * mask.size; ++i) out.mutable_data()[i] = mask.values[i] != 0.0;
        return out;
      },
      py::arg("frames"), py::arg("height"), py::arg("width"), py::arg("prompt_len"), py::arg("cond_prompt_len") = 0,
      "Boolean (N, N) matrix, True where attention is blocked.");

  m.def("mse", [](const FloatArray& a, const FloatArray& b) { return mse_metric(to_image(a), to_image(b)); });
  m.def("ssim", [](const FloatArray& a, const FloatArray& b) { return ssim_metric(to_image(a), to_image(b)); });
  m.def("edge_f1", [](const FloatArray& a, const FloatArray& b) { return edge_f1(to_image(a), to_image(b)); });

  m.def("default_config", [] { return config_to_json(RunConfig{}); });
  m.def("config_keys", &config_keys);
  m.def(
      "parse_config", [](const std::string& text) { return config_to_json(parse_config(text)); }, py::arg("json"),
      "Validates a config document and returns it with every key filled in.");

  m.def(
      "dataset_pair",
      [](const std::string& task, std::uint64_t seed, std::size_t index, std::size_t resolution) {
        TaskSpec spec;
        spec.kind = parse_task(task);
        return pair_dict(DatasetStream(spec, seed, index + 1, resolution).at(index));
      },
      py::arg("task"), py::arg("seed") = 0, py::arg("index") = 0, py::arg("resolution") = 32);

  py::class_<Model>(m, "Model")
      .def_static("create", &Model::create, py::arg("config_json") = "{}")
      .def_static("load", &Model::load, py::arg("path"))
      .def("save", &Model::save, py::arg("path"))
      .def_property_readonly("config", [](const Model& mm) { return config_to_json(mm.config); })
      .def_property_readonly("has_adapters", &Model::has_adapters)
      .def("add_adapters", [](Model& mm) { add_adapters(mm.weights, mm.config); })
      .def("generate", &Model::generate, py::arg("cond"), py::arg("prompt"), py::arg("cond_prompt") = std::nullopt,
           py::arg("steps") = 50, py::arg("seed") = 0)
      .def(
          "pretrain",
          [](Model& mm, std::size_t steps) {
            mm.config.train.pretrain_steps = steps;
            TrainRun run;
            {
              py::gil_scoped_release release;
              run = pretrain(mm.config);
            }
            mm.weights = std::move(run.weights);
            return run.losses;
          },
          py::arg("steps"), "Trains fresh base weights; returns per-step losses.")
      .def(
          "finetune",
          [](Model& mm, std::size_t steps) {
            mm.config.train.finetune_steps = steps;
            if (!mm.has_adapters()) add_adapters(mm.weights, mm.config);
            TrainRun run;
            {
              py::gil_scoped_release release;
              run = finetune(mm.config, std::move(mm.weights));
            }
            mm.weights = std::move(run.weights);
            return run.losses;
          },
          py::arg("steps"), "Adapter training on config data.task; returns per-step losses.")
      .def(
          "evaluate",
          [](const Model& mm, std::size_t samples) {
            EvalResult r;
            {
              py::gil_scoped_release release;
              r = evaluate(mm.config, mm.weights, samples);
            }
            py::list reports;
            for (const auto& rec : r.records) reports.append(report_dict(rec.report));
            return reports;
          },
          py::arg("samples"));
}
