#include "mmpt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmpt/hashing.hpp"

namespace mmpt {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "mmpt-checkpoint-v1";

template <class T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

template <class T>
void append_le(std::string& out, const Matrix<T>& m) {
  const std::size_t start = out.size();
  out.resize(start + m.size() * sizeof(T));
  std::memcpy(out.data() + start, m.data(), m.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = start; i < out.size(); i += sizeof(T)) {
      std::reverse(out.begin() + i, out.begin() + i + sizeof(T));
    }
  }
}

template <class T>
Matrix<T> read_le(const std::string& payload, std::size_t offset, std::size_t rows,
                  std::size_t cols) {
  Matrix<T> m(rows, cols);
  std::memcpy(m.data(), payload.data() + offset, m.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<char*>(m.data());
    for (std::size_t i = 0; i < m.size() * sizeof(T); i += sizeof(T)) {
      std::reverse(bytes + i, bytes + i + sizeof(T));
    }
  }
  return m;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw CorruptionError("checkpoint: cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

const nlohmann::json& field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw CorruptionError(where + ": missing field '" + key + "'");
  }
  return j.at(key);
}

}  // namespace

std::string model_config_hash(const MMPTConfig& cfg) {
  return hex64(fnv1a64(config_to_json(cfg).dump()));
}

template <class T>
void save_checkpoint(const MmptModel<T>& model, const TrainState<T>* state,
                     const std::string& dir, const nlohmann::json& extra) {
  fs::create_directories(dir);
  std::string payload;
  nlohmann::json tensors = nlohmann::json::array();
  auto put = [&](const std::string& name, const char* kind, const Matrix<T>& m, bool trainable) {
    tensors.push_back({{"name", name},
                       {"kind", kind},
                       {"rows", m.rows()},
                       {"cols", m.cols()},
                       {"dtype", dtype_name<T>()},
                       {"offset", payload.size()},
                       {"bytes", m.size() * sizeof(T)},
                       {"trainable", trainable}});
    append_le(payload, m);
  };
  const auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    put(store[i].name, "value", store[i].value, store[i].trainable);
  }
  if (state) {
    for (const auto& [name, m] : state->first_moment) put(name, "adam_m", m, true);
    for (const auto& [name, m] : state->second_moment) put(name, "adam_v", m, true);
  }
  nlohmann::json manifest = {
      {"format", kFormat},
      {"config", config_to_json(model.config())},
      {"config_hash", model_config_hash(model.config())},
      {"num_attributes", model.num_attributes()},
      {"num_objects", model.num_objects()},
      {"dtype", dtype_name<T>()},
      {"step", state ? state->step : 0},
      {"loss_sum", state ? state->loss_sum : 0.0},
      {"clamped_total", state ? state->clamped_total : 0},
      {"visual_prompt_active", model.visual_prompt_active()},
      {"shared_prompts_active", model.shared_prompts_active()},
      {"payload_bytes", payload.size()},
      {"payload_hash", hex64(fnv1a64(payload))},
      {"tensors", std::move(tensors)},
      {"extra", extra}};
  {
    std::ofstream f(fs::path(dir) / "tensors.bin", std::ios::binary);
    if (!f) throw ValidationError("checkpoint: cannot write into " + dir);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  }
  std::ofstream f(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!f) throw ValidationError("checkpoint: cannot write into " + dir);
  f << manifest.dump(1) << '\n';
}

CheckpointInfo read_checkpoint_info(const std::string& dir) {
  const std::string where = "checkpoint manifest " + (fs::path(dir) / "manifest.json").string();
  CheckpointInfo info;
  try {
    info.manifest = nlohmann::json::parse(read_file(fs::path(dir) / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(where + ": " + e.what());
  }
  const auto& m = info.manifest;
  if (field(m, "format", where) != kFormat) {
    throw CorruptionError(where + ": field 'format' is not " + std::string(kFormat));
  }
  try {
    info.config = config_from_json(field(m, "config", where));
    info.config_hash = field(m, "config_hash", where).get<std::string>();
    info.step = field(m, "step", where).get<std::uint64_t>();
    info.dtype = field(m, "dtype", where).get<std::string>();
    info.num_attributes = field(m, "num_attributes", where).get<std::size_t>();
    info.num_objects = field(m, "num_objects", where).get<std::size_t>();
    (void)field(m, "payload_bytes", where);
    if (!field(m, "tensors", where).is_array()) {
      throw CorruptionError(where + ": field 'tensors' is not an array");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(where + ": " + e.what());
  }
  return info;
}

template <class T>
void load_checkpoint(const std::string& dir, MmptModel<T>& model, TrainState<T>* state,
                     bool force) {
  const CheckpointInfo info = read_checkpoint_info(dir);
  const auto& m = info.manifest;
  const std::string where = "checkpoint " + dir;
  if (info.dtype != dtype_name<T>()) {
    throw ValidationError(where + ": stored as " + info.dtype + ", model uses " + dtype_name<T>());
  }
  const std::string expect = model_config_hash(model.config());
  if (info.config_hash != expect && !force) {
    throw ValidationError(where + ": config hash " + info.config_hash +
                          " does not match the model config " + expect + " (use --force to override)");
  }
  const std::string payload = read_file(fs::path(dir) / "tensors.bin");
  const auto declared = m.at("payload_bytes").get<std::size_t>();
  if (payload.size() != declared) {
    throw CorruptionError(where + ": tensors.bin holds " + std::to_string(payload.size()) +
                          " bytes, manifest declares " + std::to_string(declared));
  }
  if (m.contains("payload_hash") && m.at("payload_hash") != hex64(fnv1a64(payload))) {
    throw CorruptionError(where + ": tensors.bin does not match the manifest payload_hash");
  }

  std::map<std::string, Matrix<T>> values, first, second;
  std::map<std::string, bool> trainable;
  for (const auto& t : m.at("tensors")) {
    std::string name, kind;
    std::size_t rows = 0, cols = 0, offset = 0, bytes = 0;
    try {
      name = t.at("name").get<std::string>();
      kind = t.at("kind").get<std::string>();
      rows = t.at("rows").get<std::size_t>();
      cols = t.at("cols").get<std::size_t>();
      offset = t.at("offset").get<std::size_t>();
      bytes = t.at("bytes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw CorruptionError(where + ": malformed tensor entry: " + e.what());
    }
    if (bytes != rows * cols * sizeof(T) || offset + bytes > payload.size()) {
      throw CorruptionError(where + ": tensor '" + name + "' (" + kind +
                            ") lies outside the payload or has a bad byte count");
    }
    Matrix<T> v = read_le<T>(payload, offset, rows, cols);
    if (kind == "value") {
      trainable[name] = t.value("trainable", true);
      values.emplace(name, std::move(v));
    } else if (kind == "adam_m") {
      first.emplace(name, std::move(v));
    } else if (kind == "adam_v") {
      second.emplace(name, std::move(v));
    } else {
      throw CorruptionError(where + ": tensor '" + name + "' has unknown kind '" + kind + "'");
    }
  }

  auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto it = values.find(store[i].name);
    if (it == values.end()) {
      throw ValidationError(where + ": no tensor named '" + store[i].name + "'");
    }
    if (!it->second.same_shape(store[i].value)) {
      throw ValidationError(where + ": tensor '" + store[i].name + "' is " +
                            it->second.shape_string() + ", model expects " +
                            store[i].value.shape_string());
    }
  }
  if (values.size() != store.size()) {
    for (const auto& [name, v] : values) {
      if (!store.find(name)) {
        throw ValidationError(where + ": tensor '" + name + "' does not exist in the model");
      }
    }
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    store[i].value = std::move(values.at(store[i].name));
    store[i].trainable = trainable.at(store[i].name);
    store[i].zero_grad();
  }
  if (state) {
    state->step = info.step;
    state->loss_sum = m.value("loss_sum", 0.0);
    state->clamped_total = m.value("clamped_total", std::uint64_t{0});
    state->first_moment = std::move(first);
    state->second_moment = std::move(second);
  }
}

template void save_checkpoint<float>(const MmptModel<float>&, const TrainState<float>*,
                                     const std::string&, const nlohmann::json&);
template void save_checkpoint<double>(const MmptModel<double>&, const TrainState<double>*,
                                      const std::string&, const nlohmann::json&);
template void load_checkpoint<float>(const std::string&, MmptModel<float>&, TrainState<float>*,
                                     bool);
template void load_checkpoint<double>(const std::string&, MmptModel<double>&,
                                      TrainState<double>*, bool);

}  // namespace mmpt
