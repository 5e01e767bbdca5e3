#include "dractrl/metrics.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "dractrl/error.hpp"
#include "httplib.h"
#include "json.hpp"

namespace dractrl {

namespace {

void require_same(const char* op, const Image& a, const Image& b) {
  if (!a.same_shape(b) || a.pixels.size() != b.pixels.size()) {
    throw DimensionError(std::string(op) + ": " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

}  // namespace

double mse_metric(const Image& a, const Image& b) {
  require_same("mse_metric", a, b);
  if (a.pixels.empty()) return 0.0;
  double acc = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.pixels.size());
}

double ssim_metric(const Image& a, const Image& b, std::size_t window) {
  require_same("ssim_metric", a, b);
  if (window == 0 || a.height < window || a.width < window) {
    throw DimensionError("ssim_metric: image smaller than the " + std::to_string(window) + "x" +
                         std::to_string(window) + " window");
  }
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double n = static_cast<double>(window * window);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y + window <= a.height; ++y)
      for (std::size_t x = 0; x + window <= a.width; ++x) {
        double sa = 0, sb = 0;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            sa += a.at(y + dy, x + dx, c);
            sb += b.at(y + dy, x + dx, c);
          }
        const double ma = sa / n, mb = sb / n;
        double va = 0, vb = 0, cov = 0;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const double da = a.at(y + dy, x + dx, c) - ma, db = b.at(y + dy, x + dx, c) - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        va /= n;
        vb /= n;
        cov /= n;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

double edge_f1(const Image& pred, const Image& gt) {
  require_same("edge_f1", pred, gt);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t y = 0; y < gt.height; ++y)
    for (std::size_t x = 0; x < gt.width; ++x) {
      const bool p = pred.at(y, x, 0) > 0.5f, g = gt.at(y, x, 0) > 0.5f;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
  if (tp + fp + fn == 0) return 1.0;
  if (tp == 0) return 0.0;
  const double precision = double(tp) / double(tp + fp), recall = double(tp) / double(tp + fn);
  return 2 * precision * recall / (precision + recall);
}

ControllabilityReport controllability_report(const TaskSpec& task, const Image& generated, const Scene& scene,
                                             const Image& condition, const ConditionDraw& draw) {
  const Image target = task_target(scene, task.kind);
  require_same("controllability_report", generated, target);
  ControllabilityReport r;
  r.task = task.kind;
  r.ssim = ssim_metric(generated, target);
  r.mse = mse_metric(generated, target);
  r.metric = task.kind == TaskKind::edges ? "f1" : "mse";

  Scene as_generated = scene;
  as_generated.image = generated;
  switch (task.kind) {
    case TaskKind::edges: {
      Image truth = condition;
      for (auto& v : truth.pixels) v = v > 0.75f ? 1.0f : 0.0f;
      r.controllability = edge_f1(edge_map(generated, task.edge_threshold), truth);
      break;
    }
    case TaskKind::depth_predict:
      // The output is itself a depth map; compare against the proxy.
      r.controllability = mse_metric(generated, target);
      break;
    case TaskKind::subject_toy: {
      const std::vector<float> one{1.0f};
      const Image region = render_scene(scene.image.height, {0, 0, 0}, {scene.objects.front()}, 0.0, &one);
      double se = 0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < region.pixels.size(); ++i)
        if (region.pixels[i] > 0.5f) {
          const double d = static_cast<double>(generated.pixels[i]) - scene.image.pixels[i];
          se += d * d;
          ++n;
        }
      r.controllability = n ? se / static_cast<double>(n) : 0.0;
      break;
    }
    default: r.controllability = mse_metric(apply_condition(as_generated, task, draw), condition);
  }
  return r;
}

namespace {

std::string image_base64(const Image& img) { return httplib::detail::base64_encode(encode_ppm(quantize(img))); }

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

int score_field(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_number_integer()) {
    throw ProtocolError(std::string("VL response lacks integer field '") + key + "'");
  }
  const auto v = doc[key].get<long long>();
  if (v < 0 || v > 4) throw ProtocolError(std::string("VL score '") + key + "' = " + std::to_string(v) + " outside 0..4");
  return static_cast<int>(v);
}

}  // namespace

std::string vl_request_body(const std::string& prompt, const Image& condition, const Image& generated) {
  nlohmann::json doc{{"prompt", prompt}, {"condition", image_base64(condition)}, {"generated", image_base64(generated)}};
  return doc.dump();
}

VlScores parse_vl_response(const std::string& body) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("VL response is not JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ProtocolError("VL response is not a JSON object");
  return {score_field(doc, "consistency"), score_field(doc, "adherence")};
}

double vl_score_request(const std::string& prompt, const Image& condition, const Image& generated,
                        const VlEndpoint& endpoint) {
  const auto body = vl_request_body(prompt, condition, generated);
  httplib::Client client(endpoint.host, endpoint.port);
  const auto timeout = std::chrono::duration<double>(endpoint.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  std::string failure;
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto res = client.Post(endpoint.path, body, "application/json");
    if (!res) {
      failure = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) throw ProtocolError("VL evaluator returned HTTP " + std::to_string(res->status));
    return parse_vl_response(res->body).mean();
  }
  throw TransportError("VL evaluator at " + endpoint.host + ":" + std::to_string(endpoint.port) +
                       " unreachable after retry: " + failure);
}

VlScores mock_vl_scores(const std::string& request_body) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(request_body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("VL request is not JSON: ") + e.what());
  }
  for (const char* key : {"prompt", "condition", "generated"})
    if (!doc.contains(key) || !doc[key].is_string()) throw ProtocolError(std::string("VL request lacks '") + key + "'");
  const auto cond = doc["condition"].get<std::string>();
  const auto gen = doc["generated"].get<std::string>();
  const auto prompt = doc["prompt"].get<std::string>();
  return {static_cast<int>(fnv1a(gen, fnv1a(cond)) % 5), static_cast<int>(fnv1a(gen, fnv1a(prompt)) % 5)};
}

struct MockVlServer::Impl {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<std::size_t> count{0};
  Responder responder;
};

MockVlServer::MockVlServer(Responder responder) : impl_(std::make_unique<Impl>()) {
  impl_->responder = std::move(responder);
  Impl* impl = impl_.get();
  impl->server.Post("/score", [impl](const httplib::Request& req, httplib::Response& res) {
    ++impl->count;
    if (impl->responder) {
      res.set_content(impl->responder(req.body), "application/json");
      return;
    }
    try {
      const auto s = mock_vl_scores(req.body);
      res.set_content(nlohmann::json{{"consistency", s.consistency}, {"adherence", s.adherence}}.dump(),
                      "application/json");
    } catch (const ProtocolError& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    }
  });
  impl->port = impl->server.bind_to_any_port("127.0.0.1");
  if (impl->port <= 0) throw TransportError("mock VL server could not bind");
  impl->thread = std::thread([impl] { impl->server.listen_after_bind(); });
  impl->server.wait_until_ready();
}

MockVlServer::~MockVlServer() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

VlEndpoint MockVlServer::endpoint() const {
  VlEndpoint e;
  e.port = impl_->port;
  return e;
}

std::size_t MockVlServer::requests() const { return impl_->count.load(); }

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

std::string eval_summary_csv(const std::vector<EvalRecord>& records) {
  struct Acc {
    std::size_t n = 0;
    double ctrl = 0, ssim = 0, mse = 0;
  };
  std::vector<TaskKind> order;
  std::map<TaskKind, Acc> acc;
  for (const auto& r : records) {
    if (!acc.count(r.report.task)) order.push_back(r.report.task);
    auto& a = acc[r.report.task];
    ++a.n;
    a.ctrl += r.report.controllability;
    a.ssim += r.report.ssim;
    a.mse += r.report.mse;
  }
  std::ostringstream out;
  out.precision(8);
  out << "task,n,mean_controllability,mean_ssim,mean_mse\n";
  for (auto t : order) {
    const auto& a = acc[t];
    const double n = static_cast<double>(a.n);
    out << to_string(t) << ',' << a.n << ',' << a.ctrl / n << ',' << a.ssim / n << ',' << a.mse / n << '\n';
  }
  return out.str();
}

void write_eval_outputs(const std::filesystem::path& dir, const std::vector<EvalRecord>& records) {
  std::filesystem::create_directories(dir);
  std::ofstream jsonl(dir / "records.jsonl");
  for (const auto& r : records) {
    nlohmann::json doc{{"index", r.index},
                       {"task", to_string(r.report.task)},
                       {"prompt", r.prompt},
                       {"metric", r.report.metric},
                       {"controllability", r.report.controllability},
                       {"ssim", r.report.ssim},
                       {"mse", r.report.mse},
                       {"fid", optional_json(r.report.fid)},
                       {"dino", optional_json(r.report.dino)},
                       {"clip_i", optional_json(r.report.clip_i)},
                       {"clip_t", optional_json(r.report.clip_t)},
                       {"vl_score", optional_json(r.report.vl_score)}};
    jsonl << doc.dump() << '\n';
  }
  std::ofstream(dir / "summary.csv") << eval_summary_csv(records);
  if (!jsonl) throw FormatError("could not write " + (dir / "records.jsonl").string());
}

}  // namespace dractrl
