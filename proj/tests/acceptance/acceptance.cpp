// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--only <substring>] [--cli <path to dractrl>] [--work <dir>]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dractrl/checkpoint.hpp"
#include "dractrl/error.hpp"
#include "dractrl/flow.hpp"
#include "dractrl/layout.hpp"
#include "dractrl/mixup.hpp"
#include "dractrl/model.hpp"
#include "dractrl/numerics/ops.hpp"
#include "dractrl/pipeline.hpp"
#include "gradcheck.hpp"
#include "model_fixture.hpp"
#include "rational.hpp"

namespace fs = std::filesystem;
using namespace dractrl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path cli;
  fs::path work;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome formula_oracles(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (int n = 0; n <= 64; ++n) {
    const testing::Rational a(n, 64);
    worst = std::max(worst, std::abs(smoothstep_beta(a.to_double()) - testing::rational_smoothstep(a).to_double()));
  }
  for (int K = 1; K <= 16; ++K)
    for (int k = 0; k <= K; ++k)
      worst = std::max(worst, std::abs(loss_weight(k, K) - testing::rational_loss_weight(k, K).to_double()));

  // mixup_value against a long-double evaluation of the same blend with the
  // exact smoothstep; mixup_frame against mixup_value at float storage.
  double worst_mix = 0;
  for (int n = 0; n <= 32; ++n) {
    const testing::Rational a(n, 32);
    const long double beta = static_cast<long double>(testing::rational_smoothstep(a).to_double());
    for (double f0 : {0.0, 0.1, 0.5, 0.93})
      for (double f1 : {0.0, 0.37, 1.0}) {
        const long double g = 2.2L;
        const long double ref = std::pow((1 - beta) * std::pow(static_cast<long double>(f0), g) +
                                             beta * std::pow(static_cast<long double>(f1), g),
                                         1 / g);
        worst_mix = std::max(worst_mix, static_cast<double>(std::abs(mixup_value(f0, f1, a.to_double(), 2.2) - ref)));
      }
  }
  Image x(1, 1, 0.25f), y(1, 1, 0.75f);
  const double frame_err =
      std::abs(mixup_frame(x, y, 0.5, 2.2).pixels[0] - static_cast<float>(mixup_value(0.25, 0.75, 0.5, 2.2)));

  const double w0 = loss_weight(0, 2), w1 = loss_weight(1, 2), w2 = loss_weight(2, 2);
  // The quoted four-decimal values are truncated (w(0) = 0.064553...).
  const bool table = std::abs(w0 - 0.0645) < 1e-4 && std::abs(w1 - 0.6462) < 1e-4 && std::abs(w2 - 0.7405) < 1e-4;
  const double t = seconds_since(t0);
  const bool pass = worst < 1e-10 && worst_mix < 1e-10 && frame_err == 0.0 && table && t < 1.0;
  return {pass, "max |err| beta/w " + fmt(worst, 3) + ", mixup " + fmt(worst_mix, 3) + "; w(0..2) = (" + fmt(w0, 10) +
                    ", " + fmt(w1, 10) + ", " + fmt(w2, 10) + "), mixup_frame = float(64-bit blend); " + fmt(t, 3) + " s"};
}

Outcome mask_exhaustion(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  using S = Segment;
  const std::set<std::pair<S, S>> blocked{{S::cond_image, S::target_image},
                                          {S::target_image, S::cond_prompt},
                                          {S::target_prompt, S::cond_image},
                                          {S::target_prompt, S::cond_prompt},
                                          {S::cond_prompt, S::target_image}};
  ModelConfig c;
  bool ok = true;
  std::string counts;
  for (bool with_cp : {true, false}) {
    auto layout = testing::tiny_layout(c, 2, 2, with_cp);
    auto mask = build_attention_mask(layout);
    std::map<std::pair<S, S>, bool> pair_ok;
    for (std::size_t p = 0; p < layout.size(); ++p)
      for (std::size_t q = 0; q < layout.size(); ++q) {
        const auto pair = std::make_pair(layout.segment_of[p], layout.segment_of[q]);
        const bool expect = blocked.count(pair) > 0;
        const bool match = mask.blocked(p, q) == expect && mask.at(p, q) == (expect ? kBlockedScore : 0.0) &&
                           segment_pair_blocked(pair.first, pair.second) == expect;
        auto [it, fresh] = pair_ok.emplace(pair, match);
        if (!fresh) it->second = it->second && match;
      }
    std::size_t good = 0;
    for (const auto& [pair, m] : pair_ok) good += m;
    const std::size_t want = with_cp ? 16 : 9;
    ok = ok && pair_ok.size() == want && good == want;
    counts += (counts.empty() ? "" : ", ") + std::to_string(good) + "/" + std::to_string(want) +
              (with_cp ? " pairs with C_P" : " pairs without C_P");
  }
  const double t = seconds_since(t0);
  return {ok && t < 1.0, counts + "; " + fmt(t, 3) + " s"};
}

Outcome fspe(const Context&) {
  ModelConfig c;
  const std::vector<std::int32_t> tp{3, 4};
  auto layout = build_token_layout(c, 4, 8, 8, tp);
  auto pos = fspe_positions(layout, 12);
  std::set<double> temporal;
  for (std::size_t p = 0; p < layout.visual_size(); ++p) temporal.insert(pos[p][0]);
  const bool pass = temporal == std::set<double>{0, 12, 24, 36} && c.delta == 12;
  std::string got;
  for (double v : temporal) got += (got.empty() ? "" : ",") + fmt(v);
  return {pass, "temporal positions {" + got + "}, span " + fmt(*temporal.rbegin() + 1) + " frames"};
}

Outcome gradient(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  ModelConfig cfg = testing::tiny_config(32, 2);
  cfg.channels = 4;
  cfg.k = 2;
  auto layout = testing::tiny_layout(cfg, 2, 2, true);
  auto mask = build_attention_mask(layout);
  auto clean = testing::random_latent(rng, 4, 4, 2, 2);
  auto sample = make_noisy(clean, 0.55, rng, LossWeighting::transition);

  auto w32 = init_weights<float>(cfg, rng);
  attach_adapters(w32, cfg, rng);
  testing::randomize_all(w32, rng, 0.25);
  set_trainable(w32, TrainScope::all);
  auto x32 = latent_to_tokens<float>(sample.noisy);
  backward(reweighted_loss(model_forward(x32, sample.t, layout, mask, w32, cfg), sample));

  auto w64 = cast_weights<double>(w32);
  auto x64 = latent_to_tokens<double>(sample.noisy);
  auto loss64 = [&] {
    NoGradGuard ng;
    return reweighted_loss(model_forward(x64, sample.t, layout, mask, w64, cfg), sample).item();
  };

  std::vector<Tensor<float>> p32;
  std::vector<Tensor<double>> p64;
  w32.visit([&](const std::string&, Tensor<float>& t, bool) { p32.push_back(t); });
  w64.visit([&](const std::string&, Tensor<double>& t, bool) { p64.push_back(t); });

  double worst = 0;
  std::size_t checked = 0;
  for (std::size_t n = 0; n < p32.size(); ++n) {
    const std::size_t probes = std::min<std::size_t>(p32[n].numel(), 16);
    for (std::size_t j = 0; j < probes; ++j) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(p32[n].numel() - 1)));
      const double fd = testing::central_difference(p64[n], i, 1e-6, loss64);
      worst = std::max(worst, testing::relative_error(p32[n].grad()[i], fd));
      ++checked;
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-3 && checked >= 1000 && t < 120,
          "max relative error " + fmt(worst, 3) + " over " + std::to_string(checked) + " parameters (" +
              std::to_string(p32.size()) + " tensors); " + fmt(t, 3) + " s"};
}

Outcome sampler(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng data(31);
  auto y = testing::random_latent(data, 4, 4, 2, 2);
  const auto tokens = latent_to_tokens<double>(y);
  const std::vector<double> target(tokens.values().begin(), tokens.values().end());
  VelocityFn oracle = [&](const std::vector<double>& state, double t) {
    std::vector<double> v(state.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (state[i] - target[i]) / t;
    return v;
  };
  const std::size_t frame_len = y.frames[0].data.size();
  double worst = 0;
  bool frozen = true;
  for (int steps : {1, 5, 50}) {
    Rng rng(32);
    auto out = euler_sample(y.frames[0], 4, oracle, {steps, ModelMode::dra}, rng,
                            [&](int, double, const std::vector<double>& s) {
                              for (std::size_t i = 0; i < frame_len; ++i)
                                frozen &= std::memcmp(&s[i], &target[i], sizeof(double)) == 0;
                            });
    frozen &= out.frames[0] == y.frames[0];
    for (std::size_t n = 1; n < 4; ++n)
      for (std::size_t i = 0; i < frame_len; ++i)
        worst = std::max(worst, std::abs(static_cast<double>(out.frames[n].data[i]) - y.frames[n].data[i]));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-6 && frozen && t < 10,
          "endpoint error " + fmt(worst, 3) + " for steps {1,5,50}; condition frame " +
              (frozen ? "bit-identical" : "CHANGED") + "; " + fmt(t, 3) + " s"};
}

Outcome offset(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(41);
  auto layout = testing::tiny_layout(testing::tiny_config(), 2, 2, true);
  auto mask = build_attention_mask(layout);
  const std::size_t n = layout.size();
  const auto& ti = layout.span(Segment::target_image);
  const auto& tp = layout.span(Segment::target_prompt);
  int increased = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> scores(n * n);
    for (auto& v : scores) v = 2.0 * rng.normal();
    auto boosted = scores;
    add_inference_offset(boosted.data(), layout, 0.6);
    std::vector<double> p0(n * n), p1(n * n);
    kernels::masked_softmax_rows(scores.data(), mask.values.data(), n, n, p0.data());
    kernels::masked_softmax_rows(boosted.data(), mask.values.data(), n, n, p1.data());
    double m0 = 0, m1 = 0;
    bool rows = true;
    for (std::size_t r = ti.begin; r < ti.end; ++r) {
      double r0 = 0, r1 = 0;
      for (std::size_t q = tp.begin; q < tp.end; ++q) {
        r0 += p0[r * n + q];
        r1 += p1[r * n + q];
      }
      rows &= r1 > r0;
      m0 += r0;
      m1 += r1;
    }
    increased += rows && m1 > m0;
  }
  const double t = seconds_since(t0);
  return {increased == 100 && t < 10,
          std::to_string(increased) + "/100 matrices with strictly larger T_I->T_P mass (every T_I row); " +
              fmt(t, 3) + " s"};
}

Outcome lora(const Context&) {
  Rng rng(51);
  ModelConfig cfg = testing::tiny_config();
  cfg.channels = 4;
  auto layout = testing::tiny_layout(cfg, 2, 2, true);
  auto mask = build_attention_mask(layout);
  auto w = init_weights<float>(cfg, rng);
  testing::randomize_all(w, rng);
  auto x = latent_to_tokens<float>(testing::random_latent(rng, 4, 4, 2, 2));

  // Fresh adapters: the whole forward is bit-exact.
  auto adapted = clone_weights(w);
  attach_adapters(adapted, cfg, rng);
  const auto y0 = model_forward(x, 0.4, layout, mask, w, cfg);
  const auto y1 = model_forward(x, 0.4, layout, mask, adapted, cfg);
  const bool fresh = std::memcmp(y0.data(), y1.data(), y0.numel() * sizeof(float)) == 0;

  // Trained adapters with the default scales: in every adapted layer, T_I
  // rows equal the base layer and C_I rows do not.
  testing::randomize_all(adapted, rng);
  const auto scales = segment_scales<float>(layout, cfg, layout.size());
  std::size_t layers = 0, ti_exact = 0, ci_changed = 0;
  auto check = [&](const Linear<float>& l) {
    if (!l.lora_a.defined()) return;
    ++layers;
    const std::size_t in = l.w.cols();
    auto input = gaussian<float>(rng, {layout.size(), in});
    const auto base = lora_apply(l, input, std::span<const float>());
    const auto out = lora_apply(l, input, std::span<const float>(scales));
    const std::size_t width = out.cols();
    bool ti = true, ci = true;
    for (std::size_t p = 0; p < layout.size(); ++p) {
      const bool same = std::memcmp(out.data() + p * width, base.data() + p * width, width * sizeof(float)) == 0;
      if (layout.segment_of[p] == Segment::target_image) ti &= same;
      if (layout.segment_of[p] == Segment::cond_image) ci &= !same;
    }
    ti_exact += ti;
    ci_changed += ci;
  };
  check(adapted.patch_in);
  for (const auto& b : adapted.blocks)
    for (const auto* l : {&b.q, &b.k, &b.v, &b.o, &b.w1, &b.w3, &b.w2}) check(*l);
  check(adapted.final_out);
  const bool pass = fresh && layers > 0 && ti_exact == layers && ci_changed == layers;
  return {pass, std::string("fresh adapters ") + (fresh ? "bit-exact" : "DIFFER") + "; T_I rows at base in " +
                    std::to_string(ti_exact) + "/" + std::to_string(layers) + " layers, C_I rows changed in " +
                    std::to_string(ci_changed) + "/" + std::to_string(layers)};
}

double mean_range(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  return std::accumulate(v.begin() + static_cast<long>(begin), v.begin() + static_cast<long>(end), 0.0) /
         static_cast<double>(end - begin);
}

Outcome end_to_end(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig c;  // seed 0, colorize, 32x32, K = 2, 2000 + 2000 steps
  c.seed = 0;
  c.data.task = TaskKind::colorize;
  c.validate();
  const auto pre = pretrain(c);
  auto weights = clone_weights(pre.weights);
  add_adapters(weights, c);
  const auto untrained = evaluate(c, weights, 64);
  const auto run = finetune(c, std::move(weights));
  const auto trained = evaluate(c, run.weights, 64);

  const std::size_t n = run.losses.size();
  const double first = mean_range(run.losses, 0, 100);
  const double last = mean_range(run.losses, n - 100, n);
  const double before = mean_controllability(untrained);
  const double after = mean_controllability(trained);
  const double improvement = 1.0 - after / before;
  const double t = seconds_since(t0);
  const bool pass = last <= 0.5 * first && improvement >= 0.5 && t <= 1800;
  return {pass, "fine-tune loss first/last 100 " + fmt(first) + " -> " + fmt(last) + " (ratio " + fmt(last / first, 3) +
                    "); controllability MSE " + fmt(before) + " -> " + fmt(after) + " (" + fmt(100 * improvement, 3) +
                    "% better); pretrain loss " + fmt(mean_range(pre.losses, 0, 100)) + " -> " +
                    fmt(mean_range(pre.losses, pre.losses.size() - 100, pre.losses.size())) + "; " + fmt(t, 4) + " s"};
}

int run_cli(const Context& ctx, const std::string& args) {
  const std::string cmd = "\"" + ctx.cli.string() + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Outcome ablation(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = ctx.work / "ablation";
  fs::remove_all(out);
  const int code = run_cli(ctx, "ablate --out \"" + out.string() +
                                    "\" --seed 0 --set train.pretrain_steps=300 --set train.finetune_steps=150 "
                                    "--set train.batch=2 --set eval.samples=8 --set sample.steps=20");
  if (code != 0) return {false, "dractrl ablate exited with " + std::to_string(code)};
  std::ifstream in(out / "ablation.csv");
  std::string header;
  std::getline(in, header);
  std::set<std::string> combos;
  bool finite = true;
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) {
    auto cells = split_csv_line(line);
    if (cells.size() < 8) return {false, "short table row: " + line};
    ++rows;
    combos.insert(cells[0] + "/" + cells[1] + "/" + cells[2]);
    for (std::size_t i = 4; i < 8; ++i) finite &= std::isfinite(std::stod(cells[i]));
    finite &= cells[3] == "8";
  }
  bool complete = true;
  for (const auto& cell : ablation_grid())
    complete &= combos.count(to_string(cell.transition) + "/" + std::to_string(cell.frames) + "/" +
                             to_string(cell.mode)) > 0;
  const bool md = fs::exists(out / "ablation.md");
  const double t = seconds_since(t0);
  return {rows == 18 && complete && finite && md && t <= 3 * 3600,
          std::to_string(rows) + " rows, " + std::to_string(combos.size()) + " distinct cells" +
              (complete ? ", grid complete" : ", grid INCOMPLETE") + (finite ? "" : ", non-finite values") +
              "; table " + (out / "ablation.csv").string() + "; " + fmt(t, 4) + " s"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Wall-clock columns are the only permitted difference.
std::string strip_wall(const std::string& s) {
  std::string out;
  std::stringstream ss(s);
  for (std::string line; std::getline(ss, line);) {
    const auto p = line.find(" wall=");
    out += (p == std::string::npos ? line : line.substr(0, p)) + "\n";
  }
  return out;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).string();
    const auto bytes = slurp(e.path());
    files[rel] = e.path().extension() == ".log" ? strip_wall(bytes) : bytes;
  }
  return files;
}

Outcome determinism(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  ::unsetenv("DRACTRL_THREADS");
  const std::string tiny =
      " --seed 5 --set model.dim=32 --set model.heads=2 --set model.layers=2 --set model.mlp_hidden=64"
      " --set model.lora_rank=4 --set train.batch=2 --set train.log_interval=2 --set eval.samples=3"
      " --set sample.steps=4 --set train.pretrain_steps=6 --set train.finetune_steps=6";
  std::vector<std::string> failures;
  std::size_t compared = 0;
  for (int rep = 0; rep < 2; ++rep) {
    const auto root = ctx.work / ("determinism_" + std::to_string(rep));
    fs::remove_all(root);
    fs::create_directories(root);
    const auto q = [&](const std::string& rel) { return "\"" + (root / rel).string() + "\""; };
    const std::vector<std::string> cmds = {
        "datagen --out " + q("datagen") + " --count 4 --videos 1" + tiny,
        "pretrain --out " + q("pretrain") + tiny,
        "finetune --checkpoint " + q("pretrain/checkpoint.bin") + " --out " + q("finetune") + tiny,
        "infer --checkpoint " + q("finetune/checkpoint.bin") + " --cond " + q("datagen/pairs/00000_cond.ppm") +
            " --prompt \"a red circle on a blue background\" --out " + q("infer/out.ppm") + tiny,
        "eval --checkpoint " + q("finetune/checkpoint.bin") + " --out " + q("eval") + tiny,
        "export-transition --out " + q("transition") + " --transition slide" + tiny,
        "ablate --out " + q("ablate") + tiny +
            " --set train.pretrain_steps=2 --set train.finetune_steps=2 --set eval.samples=1 --set sample.steps=2",
    };
    for (const auto& c : cmds) {
      const int code = run_cli(ctx, c);
      if (code != 0) return {false, "command failed (" + std::to_string(code) + "): dractrl " + c};
    }
  }
  const auto a = tree(ctx.work / "determinism_0");
  const auto b = tree(ctx.work / "determinism_1");
  for (const auto& [rel, bytes] : a) {
    auto it = b.find(rel);
    if (it == b.end() || it->second != bytes) failures.push_back(rel);
    ++compared;
  }
  if (a.size() != b.size()) failures.push_back("file sets differ");
  const double t = seconds_since(t0);
  std::string detail = std::to_string(compared) + " artifacts from 7 commands compared";
  if (!failures.empty()) detail += "; differing: " + failures.front() + (failures.size() > 1 ? " ..." : "");
  else detail += ", all bit-identical";
  const bool has_ckpt = a.count("pretrain/checkpoint.bin") && a.count("finetune/checkpoint.bin") && a.count("infer/out.ppm");
  return {failures.empty() && has_ckpt && compared > 20, detail + "; " + fmt(t, 3) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  std::string only;
#ifdef DRACTRL_CLI_PATH
  ctx.cli = DRACTRL_CLI_PATH;
#endif
  ctx.work = fs::temp_directory_path() / "dractrl_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) only = argv[++i];
    else if (a == "--cli" && i + 1 < argc) ctx.cli = argv[++i];
    else if (a == "--work" && i + 1 < argc) ctx.work = argv[++i];
    else {
      std::cerr << "usage: acceptance [--only <substring>] [--cli <dractrl>] [--work <dir>]\n";
      return 2;
    }
  }
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria = {
      {"formula oracles", formula_oracles},
      {"mask exhaustion", mask_exhaustion},
      {"frame-skip positions", fspe},
      {"gradient correctness", gradient},
      {"sampler exactness", sampler},
      {"offset property", offset},
      {"LoRA contracts", lora},
      {"end-to-end toy run", end_to_end},
      {"ablation harness", ablation},
      {"determinism", determinism},
  };
  int failed = 0, ran = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && name.find(only) == std::string::npos) continue;
    ++ran;
    Outcome o;
    try {
      o = fn(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS  " : "FAIL  ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (ran - failed) << "/" << ran << " acceptance criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
