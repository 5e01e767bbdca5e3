#include "dractrl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dractrl/config.hpp"
#include "dractrl/error.hpp"
#include "json.hpp"

namespace dractrl {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'D', 'R', 'A', 'C'};

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? 0 : 1;
}

std::size_t dtype_size(std::uint8_t code) {
  if (code == 0) return 4;
  if (code == 1) return 8;
  throw FormatError("checkpoint: unknown dtype code " + std::to_string(code));
}

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const char* take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(*take(1, what)); }
  std::uint32_t u32(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4, what));
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  std::uint64_t u64(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(8, what));
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  std::string str(std::size_t n, const char* what) { return std::string(take(n, what), n); }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

struct StoredTensor {
  std::uint8_t dtype = 0;
  Shape shape;
  std::uint64_t offset = 0;
};

struct RawCheckpoint {
  json header;
  std::vector<std::string> order;
  std::map<std::string, StoredTensor> tensors;
  std::string bytes;
  std::size_t data_begin = 0;
};

std::string scope_name(TrainScope s) {
  switch (s) {
    case TrainScope::base: return "base";
    case TrainScope::adapters: return "adapters";
    case TrainScope::all: return "all";
    case TrainScope::none: return "none";
  }
  return "none";
}

TrainScope parse_scope(const std::string& s) {
  if (s == "base") return TrainScope::base;
  if (s == "adapters") return TrainScope::adapters;
  if (s == "all") return TrainScope::all;
  if (s == "none") return TrainScope::none;
  throw FormatError("checkpoint: unknown train scope '" + s + "'");
}

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  RawCheckpoint raw;
  {
    std::stringstream ss;
    ss << in.rdbuf();
    raw.bytes = ss.str();
  }
  Reader r(raw.bytes);
  if (std::memcmp(r.take(4, "magic"), kMagic, 4) != 0) throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  const std::uint32_t header_len = r.u32("header length");
  try {
    raw.header = json::parse(r.str(header_len, "header"));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("tensor name length");
    std::string name = r.str(name_len, "tensor name");
    StoredTensor t;
    t.dtype = r.u8("dtype");
    dtype_size(t.dtype);
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw FormatError("checkpoint tensor '" + name + "': implausible rank " + std::to_string(rank));
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<std::size_t>(r.u64("extent")));
    t.offset = r.u64("offset");
    if (!raw.tensors.emplace(name, t).second) throw FormatError("checkpoint: duplicate tensor '" + name + "'");
    raw.order.push_back(std::move(name));
  }
  raw.data_begin = r.pos();
  const std::size_t data_size = raw.bytes.size() - raw.data_begin;
  for (const auto& [name, t] : raw.tensors) {
    const std::uint64_t n = shape_numel(t.shape) * dtype_size(t.dtype);
    if (t.offset > data_size || n > data_size - t.offset)
      throw FormatError("checkpoint truncated: tensor '" + name + "' extends past the end of the file");
  }
  return raw;
}

template <typename T>
void copy_into(const RawCheckpoint& raw, const std::string& name, const StoredTensor& st, std::span<T> dst) {
  const char* src = raw.bytes.data() + raw.data_begin + st.offset;
  if (st.dtype == dtype_code<T>()) {
    std::memcpy(dst.data(), src, dst.size() * sizeof(T));
    return;
  }
  // Cross-precision loads go through the stored type.
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (st.dtype == 0) {
      float v;
      std::memcpy(&v, src + i * 4, 4);
      dst[i] = static_cast<T>(v);
    } else {
      double v;
      std::memcpy(&v, src + i * 8, 8);
      dst[i] = static_cast<T>(v);
    }
  }
  (void)name;
}

template <typename T>
Checkpoint<T> assemble(const RawCheckpoint& raw, const ModelConfig& config, const std::filesystem::path& path) {
  Checkpoint<T> ck;
  ck.config = config;
  ck.run_config = raw.header.value("run", json::object()).dump();
  ck.scope = parse_scope(raw.header.value("scope", std::string("none")));

  bool has_adapters = false;
  for (const auto& name : raw.order)
    if (name.size() > 7 && name.compare(name.size() - 7, 7, ".lora_a") == 0) has_adapters = true;

  Rng rng(0);
  ck.weights = init_weights<T>(config, rng);
  if (has_adapters) attach_adapters(ck.weights, config, rng);

  std::size_t used = 0;
  ck.weights.visit([&](const std::string& name, Tensor<T>& t, bool) {
    auto it = raw.tensors.find(name);
    if (it == raw.tensors.end()) throw FormatError(path.string() + ": checkpoint lacks tensor '" + name + "'");
    if (it->second.shape != t.shape())
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape) +
                           " but the model expects " + shape_str(t.shape()));
    copy_into(raw, name, it->second, t.mutable_values());
    ++used;
  });

  set_trainable(ck.weights, ck.scope);
  if (raw.header.contains("optimizer")) {
    const auto& o = raw.header["optimizer"];
    AdamWSettings s{o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                    o.at("eps").get<double>(), o.at("weight_decay").get<double>()};
    auto params = collect_trainable(ck.weights);
    OptimizerState<T> state(s, params);
    state.step = o.at("step").get<std::uint64_t>();
    std::size_t i = 0;
    ck.weights.visit([&](const std::string& name, Tensor<T>& t, bool) {
      if (!t.requires_grad()) return;
      for (auto [prefix, moments] : {std::pair{"opt.m.", &state.first_moment}, std::pair{"opt.v.", &state.second_moment}}) {
        const std::string key = prefix + name;
        auto it = raw.tensors.find(key);
        if (it == raw.tensors.end()) throw FormatError(path.string() + ": checkpoint lacks tensor '" + key + "'");
        if (it->second.shape != t.shape())
          throw DimensionError("checkpoint tensor '" + key + "' has shape " + shape_str(it->second.shape) +
                               " but the model expects " + shape_str(t.shape()));
        copy_into(raw, key, it->second, std::span<T>((*moments)[i]));
        ++used;
      }
      ++i;
    });
    ck.optimizer = std::move(state);
  }
  if (used != raw.tensors.size())
    throw FormatError(path.string() + ": checkpoint holds " + std::to_string(raw.tensors.size() - used) +
                      " tensor(s) the model does not define");
  return ck;
}

ModelConfig header_config(const RawCheckpoint& raw, const std::filesystem::path& path) {
  if (!raw.header.contains("model")) throw FormatError(path.string() + ": checkpoint header lacks the model config");
  try {
    return model_config_from_json(raw.header["model"].dump());
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": checkpoint model config: " + e.what());
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelWeights<T>& weights, const ModelConfig& config,
                     TrainScope scope, const OptimizerState<T>* optimizer, const std::string& run_config) {
  json header;
  header["model"] = json::parse(model_config_to_json(config));
  header["scope"] = scope_name(scope);
  header["run"] = json::parse(run_config);

  struct Entry {
    std::string name;
    Shape shape;
    std::span<const T> values;
  };
  std::vector<Entry> entries;
  weights.visit([&](const std::string& name, const Tensor<T>& t, bool) { entries.push_back({name, t.shape(), t.values()}); });

  if (optimizer) {
    const auto& s = optimizer->settings;
    header["optimizer"] = {{"step", optimizer->step}, {"lr", s.lr},   {"beta1", s.beta1},
                           {"beta2", s.beta2},       {"eps", s.eps}, {"weight_decay", s.weight_decay}};
    // Moments follow the trainable tensors under `scope` in visit order.
    std::vector<std::pair<std::string, Shape>> trainable;
    weights.visit([&](const std::string& name, const Tensor<T>& t, bool adapter) {
      const bool on = scope == TrainScope::all || (scope == TrainScope::base && !adapter) ||
                      (scope == TrainScope::adapters && adapter);
      if (on) trainable.emplace_back(name, t.shape());
    });
    if (trainable.size() != optimizer->first_moment.size() || trainable.size() != optimizer->second_moment.size())
      throw ConfigError("save_checkpoint: optimizer state does not match the trainable tensors");
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      const auto& [name, shape] = trainable[i];
      if (optimizer->first_moment[i].size() != shape_numel(shape) || optimizer->second_moment[i].size() != shape_numel(shape))
        throw ConfigError("save_checkpoint: optimizer moment size mismatch for '" + name + "'");
      entries.push_back({"opt.m." + name, shape, optimizer->first_moment[i]});
      entries.push_back({"opt.v." + name, shape, optimizer->second_moment[i]});
    }
  }

  const std::string header_text = header.dump();
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u8(out, dtype_code<T>());
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put_u64(out, d);
    put_u64(out, offset);
    offset += e.values.size() * sizeof(T);
  }
  for (const auto& e : entries) out.append(reinterpret_cast<const char*>(e.values.data()), e.values.size() * sizeof(T));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write checkpoint " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const auto raw = read_raw(path);
  return assemble<T>(raw, header_config(raw, path), path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  const auto raw = read_raw(path);
  header_config(raw, path);
  return assemble<T>(raw, expected, path);
}

#define DRACTRL_INSTANTIATE_CHECKPOINT(T)                                                                     \
  template void save_checkpoint(const std::filesystem::path&, const ModelWeights<T>&, const ModelConfig&,     \
                                TrainScope, const OptimizerState<T>*, const std::string&);                    \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);                                    \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&, const ModelConfig&);

DRACTRL_INSTANTIATE_CHECKPOINT(float)
DRACTRL_INSTANTIATE_CHECKPOINT(double)

}  // namespace dractrl
