#include "dractrl/config.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>

#include "dractrl/error.hpp"
#include "dractrl/numerics/rng.hpp"
#include "json.hpp"

namespace dractrl {

namespace {

using json = nlohmann::json;

struct Field {
  std::string key;
  bool text;  // command-line values are taken verbatim
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

[[noreturn]] void bad_type(const std::string& key, const char* want, const json& v) {
  throw ConfigError("config key '" + key + "': expected " + want + ", got " + std::string(v.type_name()) + " " +
                    v.dump());
}

template <typename Member>
Field size_field(std::string key, Member member) {
  return {key, false, [member](const RunConfig& c) { return json(member(c)); },
          [key, member](RunConfig& c, const json& v) {
            if (!v.is_number_integer() || v.get<std::int64_t>() < 0) bad_type(key, "a non-negative integer", v);
            member(c) = v.get<std::size_t>();
          }};
}

template <typename Member>
Field int_field(std::string key, Member member) {
  return {key, false, [member](const RunConfig& c) { return json(member(c)); },
          [key, member](RunConfig& c, const json& v) {
            if (!v.is_number_integer()) bad_type(key, "an integer", v);
            member(c) = v.get<int>();
          }};
}

template <typename Member>
Field real_field(std::string key, Member member) {
  return {key, false, [member](const RunConfig& c) { return json(member(c)); },
          [key, member](RunConfig& c, const json& v) {
            if (!v.is_number()) bad_type(key, "a number", v);
            member(c) = v.get<double>();
          }};
}

template <typename Member>
Field bool_field(std::string key, Member member) {
  return {key, false, [member](const RunConfig& c) { return json(member(c)); },
          [key, member](RunConfig& c, const json& v) {
            if (!v.is_boolean()) bad_type(key, "true or false", v);
            member(c) = v.get<bool>();
          }};
}

template <typename Member>
Field string_field(std::string key, Member member) {
  return {key, true, [member](const RunConfig& c) { return json(member(c)); },
          [key, member](RunConfig& c, const json& v) {
            if (!v.is_string()) bad_type(key, "a string", v);
            member(c) = v.get<std::string>();
          }};
}

template <typename Member, typename Parse>
Field enum_field(std::string key, Member member, Parse parse) {
  return {key, true, [member](const RunConfig& c) { return json(to_string(member(c))); },
          [key, member, parse](RunConfig& c, const json& v) {
            if (!v.is_string()) bad_type(key, "a string", v);
            try {
              member(c) = parse(v.get<std::string>());
            } catch (const Error& e) {
              throw ConfigError("config key '" + key + "': " + e.what());
            }
          }};
}

#define DRACTRL_MEMBER(path) [](auto& c) -> auto& { return c.path; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seed", false, [](const RunConfig& c) { return json(c.seed); },
                 [](RunConfig& c, const json& v) {
                   if (!v.is_number_integer() || v.get<std::int64_t>() < 0) bad_type("seed", "a non-negative integer", v);
                   c.seed = v.get<std::uint64_t>();
                 }});
    f.push_back(size_field("model.dim", DRACTRL_MEMBER(model.dim)));
    f.push_back(size_field("model.heads", DRACTRL_MEMBER(model.heads)));
    f.push_back(size_field("model.layers", DRACTRL_MEMBER(model.layers)));
    f.push_back(size_field("model.mlp_hidden", DRACTRL_MEMBER(model.mlp_hidden)));
    f.push_back(size_field("model.vocab_size", DRACTRL_MEMBER(model.vocab_size)));
    f.push_back(size_field("model.channels", DRACTRL_MEMBER(model.channels)));
    f.push_back(size_field("model.max_prompt_len", DRACTRL_MEMBER(model.max_prompt_len)));
    f.push_back(int_field("model.k", DRACTRL_MEMBER(model.k)));
    f.push_back(int_field("model.delta", DRACTRL_MEMBER(model.delta)));
    f.push_back(real_field("model.omega", DRACTRL_MEMBER(model.omega)));
    f.push_back(size_field("model.lora_rank", DRACTRL_MEMBER(model.lora_rank)));
    f.push_back({"model.lora_scales", false, [](const RunConfig& c) { return json(c.model.lora_scales); },
                 [](RunConfig& c, const json& v) {
                   if (!v.is_array() || v.size() != kSegmentCount)
                     bad_type("model.lora_scales", "an array of 4 numbers", v);
                   for (std::size_t i = 0; i < kSegmentCount; ++i) {
                     if (!v[i].is_number()) bad_type("model.lora_scales", "an array of 4 numbers", v);
                     c.model.lora_scales[i] = v[i].get<double>();
                   }
                 }});
    f.push_back(enum_field("model.mode", DRACTRL_MEMBER(model.mode), [](const std::string& s) { return parse_mode(s); }));
    f.push_back(size_field("train.pretrain_steps", DRACTRL_MEMBER(train.pretrain_steps)));
    f.push_back(size_field("train.finetune_steps", DRACTRL_MEMBER(train.finetune_steps)));
    f.push_back(size_field("train.batch", DRACTRL_MEMBER(train.batch)));
    f.push_back(real_field("train.pretrain_lr", DRACTRL_MEMBER(train.pretrain_lr)));
    f.push_back(real_field("train.lr", DRACTRL_MEMBER(train.lr)));
    f.push_back(real_field("train.beta1", DRACTRL_MEMBER(train.beta1)));
    f.push_back(real_field("train.beta2", DRACTRL_MEMBER(train.beta2)));
    f.push_back(real_field("train.eps", DRACTRL_MEMBER(train.eps)));
    f.push_back(real_field("train.weight_decay", DRACTRL_MEMBER(train.weight_decay)));
    f.push_back(size_field("train.log_interval", DRACTRL_MEMBER(train.log_interval)));
    f.push_back(enum_field("data.task", DRACTRL_MEMBER(data.task), [](const std::string& s) { return parse_task(s); }));
    f.push_back(size_field("data.resolution", DRACTRL_MEMBER(data.resolution)));
    f.push_back(enum_field("data.transition", DRACTRL_MEMBER(data.transition),
                           [](const std::string& s) { return parse_transition(s); }));
    f.push_back(real_field("data.gamma", DRACTRL_MEMBER(data.gamma)));
    f.push_back(size_field("data.count", DRACTRL_MEMBER(data.count)));
    f.push_back(real_field("data.fade_probability", DRACTRL_MEMBER(data.fade_probability)));
    f.push_back(real_field("data.max_speed", DRACTRL_MEMBER(data.max_speed)));
    f.push_back(int_field("data.blur_min", DRACTRL_MEMBER(data.blur_min)));
    f.push_back(int_field("data.blur_max", DRACTRL_MEMBER(data.blur_max)));
    f.push_back(real_field("data.mask_probability", DRACTRL_MEMBER(data.mask_probability)));
    f.push_back(size_field("data.downsample", DRACTRL_MEMBER(data.downsample)));
    f.push_back(real_field("data.edge_threshold", DRACTRL_MEMBER(data.edge_threshold)));
    f.push_back(bool_field("data.normalize_condition", DRACTRL_MEMBER(data.normalize_condition)));
    f.push_back(int_field("sample.steps", DRACTRL_MEMBER(sample.steps)));
    f.push_back(size_field("eval.samples", DRACTRL_MEMBER(eval.samples)));
    f.push_back(bool_field("eval.vl", DRACTRL_MEMBER(eval.vl)));
    f.push_back(string_field("eval.vl_host", DRACTRL_MEMBER(eval.vl_host)));
    f.push_back(int_field("eval.vl_port", DRACTRL_MEMBER(eval.vl_port)));
    f.push_back(string_field("eval.vl_path", DRACTRL_MEMBER(eval.vl_path)));
    f.push_back(real_field("eval.vl_timeout", DRACTRL_MEMBER(eval.vl_timeout)));
    return f;
  }();
  return table;
}

#undef DRACTRL_MEMBER

const Field* find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

void flatten(const json& node, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object()) flatten(it.value(), key, out);
    else out.emplace_back(key, it.value());
  }
}

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text.begin(), text.end(), nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace

TaskSpec RunConfig::task_spec() const {
  TaskSpec t;
  t.kind = data.task;
  t.blur_min = data.blur_min;
  t.blur_max = data.blur_max;
  t.mask_probability = data.mask_probability;
  t.downsample = data.downsample;
  t.edge_threshold = data.edge_threshold;
  t.normalize_condition = data.normalize_condition;
  return t;
}

void RunConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (train.batch == 0) fail("train.batch must be positive");
  if (train.log_interval == 0) fail("train.log_interval must be positive");
  if (!(train.lr >= 0) || !(train.pretrain_lr >= 0)) fail("train learning rates must be non-negative");
  if (data.resolution == 0 || data.resolution % 4 != 0) fail("data.resolution must be a positive multiple of 4");
  if (!(data.gamma > 0)) fail("data.gamma must be positive");
  if (data.blur_min < 0 || data.blur_max < data.blur_min) fail("data.blur_min/blur_max out of order");
  if (data.downsample == 0 || data.resolution % data.downsample != 0)
    fail("data.downsample must divide data.resolution");
  if (sample.steps < 1) fail("sample.steps must be at least 1");
  if (eval.vl_port <= 0 || eval.vl_port > 65535) fail("eval.vl_port out of range");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

RunConfig parse_config(std::string_view json_text, RunConfig base) {
  std::string_view trimmed = json_text;
  while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.front()))) trimmed.remove_prefix(1);
  if (trimmed.empty()) return base;
  const json doc = parse_json(json_text, "config");
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
  std::vector<std::pair<std::string, json>> flat;
  flatten(doc, "", flat);
  for (const auto& [key, value] : flat) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    f->set(base, value);
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + std::string(key) + "'");
  if (f->text) {
    f->set(config, json(std::string(value)));
    return;
  }
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse value '" + std::string(value) + "'");
  }
  f->set(config, v);
}

std::string config_to_json(const RunConfig& config) {
  json doc = json::object();
  for (const auto& f : fields()) doc[f.key] = f.get(config);
  // Keep documentation order rather than json's sorted keys.
  std::string out = "{\n";
  for (std::size_t i = 0; i < fields().size(); ++i) {
    const auto& f = fields()[i];
    out += "  " + json(f.key).dump() + ": " + doc[f.key].dump() + (i + 1 < fields().size() ? ",\n" : "\n");
  }
  return out + "}\n";
}

std::string model_config_to_json(const ModelConfig& config) {
  RunConfig rc;
  rc.model = config;
  json doc = json::object();
  for (const auto& f : fields())
    if (f.key.rfind("model.", 0) == 0) doc[f.key] = f.get(rc);
  return doc.dump();
}

ModelConfig model_config_from_json(std::string_view json_text) {
  const json doc = parse_json(json_text, "model config");
  if (!doc.is_object()) throw ConfigError("model config: expected an object");
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (it.key().rfind("model.", 0) != 0) throw ConfigError("model config: unexpected key '" + it.key() + "'");
  return parse_config(json_text).model;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.dim == b.dim && a.heads == b.heads && a.layers == b.layers && a.mlp_hidden == b.mlp_hidden &&
         a.vocab_size == b.vocab_size && a.channels == b.channels && a.max_prompt_len == b.max_prompt_len &&
         a.k == b.k && a.delta == b.delta && a.omega == b.omega && a.lora_rank == b.lora_rank &&
         a.lora_scales == b.lora_scales && a.mode == b.mode;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return config_to_json(a) == config_to_json(b); }

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : purpose) h = (h ^ ch) * 1099511628211ull;
  Rng rng(seed, stream_id({h}));
  return rng.next_u64();
}

}  // namespace dractrl
