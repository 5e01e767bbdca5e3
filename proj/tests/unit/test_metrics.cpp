#include <cmath>
#include <fstream>

#include "doctest.h"
#include "dractrl/error.hpp"
#include "dractrl/metrics.hpp"

using namespace dractrl;

namespace {

Image random_image(Rng& rng, std::size_t h, std::size_t w) {
  Image img(h, w);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

Image binary(std::size_t h, std::size_t w, std::initializer_list<std::pair<std::size_t, std::size_t>> on) {
  Image img(h, w);
  for (auto [y, x] : on)
    for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = 1.0f;
  return img;
}

}  // namespace

TEST_CASE("mse_metric") {
  Rng rng(1);
  auto a = random_image(rng, 8, 8), b = random_image(rng, 8, 8);
  CHECK(mse_metric(a, a) == 0.0);
  CHECK(mse_metric(Image(4, 4, 0.0f), Image(4, 4, 1.0f)) == 1.0);
  Image half(4, 4, 0.25f);
  for (std::size_t i = 0; i < half.pixels.size() / 2; ++i) half.pixels[i] = 0.75f;
  CHECK(mse_metric(half, Image(4, 4, 0.25f)) == 0.125);
  CHECK(mse_metric(a, b) == mse_metric(b, a));
  CHECK_THROWS_AS(mse_metric(Image(4, 4), Image(4, 5)), DimensionError);
}

TEST_CASE("ssim_metric") {
  Rng rng(2);
  auto a = random_image(rng, 16, 16), b = random_image(rng, 16, 16);
  CHECK(ssim_metric(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  Image neg = a;
  for (auto& v : neg.pixels) v = 1.0f - v;
  CHECK(ssim_metric(a, neg) < 0.0);
  const double c1 = 1e-4;
  const double expect = (2 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
  CHECK(std::abs(ssim_metric(Image(8, 8, 0.5f), Image(8, 8, 0.6f)) - expect) < 1e-6);
  CHECK(ssim_metric(a, b) == doctest::Approx(ssim_metric(b, a)).epsilon(1e-12));
  CHECK_THROWS_AS(ssim_metric(Image(7, 7), Image(7, 7)), DimensionError);
}

TEST_CASE("edge_f1") {
  auto gt = binary(4, 4, {{0, 0}, {1, 1}, {2, 2}, {3, 3}});
  CHECK(edge_f1(gt, gt) == 1.0);
  CHECK(edge_f1(binary(4, 4, {{0, 3}}), gt) == 0.0);
  CHECK(edge_f1(binary(4, 4, {{0, 0}, {1, 1}}), gt) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(edge_f1(Image(4, 4), Image(4, 4)) == 1.0);
  // Dropping false positives never lowers the score.
  auto noisy = binary(4, 4, {{0, 0}, {1, 1}, {0, 3}, {3, 0}});
  auto cleaner = binary(4, 4, {{0, 0}, {1, 1}, {0, 3}});
  CHECK(edge_f1(cleaner, gt) >= edge_f1(noisy, gt));
}

TEST_CASE("controllability_report") {
  Rng rng(3);
  for (auto kind : all_tasks()) {
    TaskSpec task{kind};
    auto scene = gen_scene(rng, 32);
    auto cond = make_condition(scene, task, rng);
    auto truth = task_target(scene, kind);
    auto r = controllability_report(task, truth, scene, cond.image, cond.draw);
    CHECK(r.task == kind);
    CHECK(r.metric == (kind == TaskKind::edges ? "f1" : "mse"));
    if (kind == TaskKind::edges) CHECK(r.controllability == 1.0);
    else CHECK(r.controllability == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.mse == 0.0);
    CHECK(r.ssim == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_FALSE(r.fid.has_value());
  }

  // Returning the grayscale condition is perfectly controllable but poor.
  Scene scene;
  do scene = gen_scene(rng, 32);
  while (scene.objects.size() < 2);
  TaskSpec colorize{TaskKind::colorize};
  auto cond = make_condition(scene, colorize, rng);
  auto r = controllability_report(colorize, cond.image, scene, cond.image, cond.draw);
  CHECK(r.controllability == 0.0);
  CHECK(r.ssim < 1.0);
}

TEST_CASE("VL protocol") {
  CHECK(parse_vl_response(R"({"consistency": 4, "adherence": 2})").mean() == 3.0);
  CHECK(parse_vl_response(R"({"consistency": 0, "adherence": 0})").mean() == 0.0);
  CHECK_THROWS_AS(parse_vl_response(R"({"consistency": 5, "adherence": 2})"), ProtocolError);
  CHECK_THROWS_AS(parse_vl_response(R"({"consistency": 1})"), ProtocolError);
  CHECK_THROWS_AS(parse_vl_response(R"({"consistency": 1.5, "adherence": 2})"), ProtocolError);
  CHECK_THROWS_AS(parse_vl_response("not json"), ProtocolError);

  Rng rng(4);
  auto cond = random_image(rng, 8, 8), gen = random_image(rng, 8, 8);
  const auto body = vl_request_body("a red circle", cond, gen);
  CHECK(mock_vl_scores(body).consistency == mock_vl_scores(body).consistency);

  MockVlServer mock;
  const double s = vl_score_request("a red circle", cond, gen, mock.endpoint());
  CHECK(s == mock_vl_scores(body).mean());
  CHECK(s >= 0.0);
  CHECK(s <= 4.0);
  CHECK(mock.requests() == 1);

  MockVlServer fixed([](const std::string&) { return std::string(R"({"consistency": 4, "adherence": 2})"); });
  CHECK(vl_score_request("p", cond, gen, fixed.endpoint()) == 3.0);
  MockVlServer bad([](const std::string&) { return std::string(R"({"consistency": 5, "adherence": 2})"); });
  CHECK_THROWS_AS(vl_score_request("p", cond, gen, bad.endpoint()), ProtocolError);

  VlEndpoint dead = mock.endpoint();
  dead.port = 1;
  dead.timeout_seconds = 0.5;
  CHECK_THROWS_AS(vl_score_request("p", cond, gen, dead), TransportError);
}

TEST_CASE("eval outputs") {
  std::vector<EvalRecord> recs(3);
  recs[0].report = {TaskKind::colorize, "mse", 0.1, 0.5, 0.2};
  recs[1].report = {TaskKind::colorize, "mse", 0.3, 0.7, 0.4};
  recs[2].report = {TaskKind::edges, "f1", 0.5, 0.6, 0.1};
  const auto csv = eval_summary_csv(recs);
  CHECK(csv == "task,n,mean_controllability,mean_ssim,mean_mse\ncolorize,2,0.2,0.6,0.3\nedges,1,0.5,0.6,0.1\n");
  const auto dir = std::filesystem::temp_directory_path() / "dractrl_eval_test";
  write_eval_outputs(dir, recs);
  std::ifstream in(dir / "records.jsonl");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 3);
  std::filesystem::remove_all(dir);
}
