#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dractrl/image.hpp"
#include "dractrl/tasks.hpp"

namespace dractrl {

// Mean squared difference over every pixel and channel.
double mse_metric(const Image& a, const Image& b);

// Mean local SSIM over all 8x8 windows (stride 1) and channels, uniform
// window weights, c1 = 0.01^2, c2 = 0.03^2.
double ssim_metric(const Image& a, const Image& b, std::size_t window = 8);

// Pixel-level F1 of binary maps (channel 0 > 0.5 is an edge). Two empty maps
// score 1; otherwise 0 when precision and recall are both 0.
double edge_f1(const Image& pred, const Image& gt);

struct ControllabilityReport {
  TaskKind task = TaskKind::colorize;
  std::string metric;          // "f1" or "mse"
  double controllability = 0;  // F1 (higher is better) or MSE (lower is better)
  double ssim = 0;             // generated vs ground truth
  double mse = 0;              // generated vs ground truth
  // Slots for scores computed by external networks, merged in later.
  std::optional<double> fid, dino, clip_i, clip_t, vl_score;
};

// Re-extracts the condition from `generated` with the task's own operator
// (replaying `draw`) and scores it against `condition`.
ControllabilityReport controllability_report(const TaskSpec& task, const Image& generated, const Scene& scene,
                                             const Image& condition, const ConditionDraw& draw);

// Evaluator protocol: POST {prompt, condition, generated} (images as
// base64-encoded binary PPM) and receive {consistency, adherence}, integers
// in 0..4.
struct VlEndpoint {
  std::string host = "127.0.0.1";
  int port = 8765;
  std::string path = "/score";
  double timeout_seconds = 10.0;
};

struct VlScores {
  int consistency = 0;
  int adherence = 0;
  double mean() const { return (consistency + adherence) / 2.0; }
};

std::string vl_request_body(const std::string& prompt, const Image& condition, const Image& generated);
// Throws ProtocolError on malformed documents or out-of-range scores.
VlScores parse_vl_response(const std::string& body);
// Mean of the two scores. Transport failures are retried once, then
// TransportError.
double vl_score_request(const std::string& prompt, const Image& condition, const Image& generated,
                        const VlEndpoint& endpoint);

// Deterministic stand-in for an evaluator: scores from FNV-1a hashes of the
// encoded images and prompt.
VlScores mock_vl_scores(const std::string& request_body);

// Local HTTP evaluator on 127.0.0.1. The default responder is
// mock_vl_scores; tests may install their own raw responder.
class MockVlServer {
 public:
  using Responder = std::function<std::string(const std::string& request_body)>;
  explicit MockVlServer(Responder responder = {});
  ~MockVlServer();
  MockVlServer(const MockVlServer&) = delete;
  MockVlServer& operator=(const MockVlServer&) = delete;

  VlEndpoint endpoint() const;
  std::size_t requests() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct EvalRecord {
  std::size_t index = 0;
  std::string prompt;
  ControllabilityReport report;
};

// records.jsonl (one JSON object per sample) and summary.csv
// (task, n, mean controllability, mean SSIM, mean MSE).
void write_eval_outputs(const std::filesystem::path& dir, const std::vector<EvalRecord>& records);
std::string eval_summary_csv(const std::vector<EvalRecord>& records);

}  // namespace dractrl
