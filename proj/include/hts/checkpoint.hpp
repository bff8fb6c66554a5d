#pragma once

// Self-describing binary checkpoints.
//
// Layout: the magic line "HTSCKPT1\n", an 8-byte little-endian length, a JSON
// header of that length, then the float64 payload. The header carries the
// canonical config text (enough to rebuild the model), trainer counters, RNG
// state, optimizer slot metadata and an index of named arrays into the
// payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hts/config.hpp"
#include "hts/error.hpp"
#include "hts/io.hpp"
#include "hts/model.hpp"
#include "hts/optim.hpp"
#include "hts/rng.hpp"

namespace hts {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

inline constexpr char kCheckpointMagic[] = "HTSCKPT1\n";

struct TrainerState {
  std::size_t iteration = 0;  // optimizer steps taken
  std::size_t episodes = 0;   // training episodes consumed
  Rng rng{0};
  double best_val = -1.0;  // percent; negative until the first validation
  std::size_t best_episodes = 0;
};

struct Checkpoint {
  RunConfig config;
  Model model;
  TrainerState state;
  Adam optimizer;
};

namespace checkpoint_detail {

struct Writer {
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  std::vector<double> payload;

  void add(const std::string& name, const std::string& kind, const Shape& shape,
           std::span<const double> values) {
    index.push_back({{"name", name}, {"kind", kind}, {"shape", shape},
                     {"offset", payload.size()}, {"count", values.size()}});
    payload.insert(payload.end(), values.begin(), values.end());
  }
};

}  // namespace checkpoint_detail

inline std::string serialize_checkpoint(const RunConfig& config, const Model& model,
                                        const TrainerState& state, const Adam& optimizer) {
  checkpoint_detail::Writer w;
  for (const auto& [group, store] : model.groups()) {
    for (const auto& [name, t] : store->params()) w.add(group + "/" + name, "param", t.shape(), t.data());
    for (const auto& [name, b] : store->buffers()) w.add(group + "/" + name, "buffer", {b.size()}, b);
  }
  nlohmann::ordered_json slots = nlohmann::ordered_json::object();
  for (const auto& [key, slot] : optimizer.slots()) {
    slots[key] = slot.steps;
    w.add(key, "adam_m", {slot.m.size()}, slot.m);
    w.add(key, "adam_v", {slot.v.size()}, slot.v);
  }

  nlohmann::ordered_json header;
  header["format"] = 1;
  header["config"] = to_text(config);
  header["iteration"] = state.iteration;
  header["episodes"] = state.episodes;
  header["rng"] = state.rng.serialize();
  header["best_val"] = state.best_val;
  header["best_episodes"] = state.best_episodes;
  header["adam_steps"] = slots;
  header["tensors"] = w.index;
  const std::string meta = header.dump();

  std::string out(kCheckpointMagic);
  const std::uint64_t len = meta.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += meta;
  out.append(reinterpret_cast<const char*>(w.payload.data()), w.payload.size() * sizeof(double));
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const RunConfig& config,
                            const Model& model, const TrainerState& state, const Adam& optimizer) {
  io::write_file_atomic(path, serialize_checkpoint(config, model, state, optimizer));
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
  const std::size_t magic_len = sizeof(kCheckpointMagic) - 1;
  if (bytes.size() < magic_len + 8 || bytes.compare(0, magic_len, kCheckpointMagic) != 0)
    throw DataError(origin + " is not a checkpoint file");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + magic_len, sizeof len);
  const std::size_t payload_start = magic_len + 8 + len;
  if (payload_start > bytes.size()) throw DataError(origin + " is truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(magic_len + 8, len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": corrupt header (" + e.what() + ")");
  }
  const std::size_t payload_count = (bytes.size() - payload_start) / sizeof(double);
  auto read = [&](const nlohmann::json& entry) {
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = entry.at("count").get<std::size_t>();
    if (offset + count > payload_count) throw DataError(origin + " is truncated");
    std::vector<double> v(count);
    std::memcpy(v.data(), bytes.data() + payload_start + offset * sizeof(double), count * sizeof(double));
    return v;
  };

  Checkpoint ck{parse_config(header.at("config").get<std::string>()), {}, {}, {}};
  ck.model = init_model(ck.config.model_config());
  ck.state.iteration = header.at("iteration").get<std::size_t>();
  ck.state.episodes = header.at("episodes").get<std::size_t>();
  ck.state.rng = Rng::deserialize(header.at("rng").get<std::string>());
  ck.state.best_val = header.at("best_val").get<double>();
  ck.state.best_episodes = header.at("best_episodes").get<std::size_t>();
  ck.optimizer.weight_decay = ck.config.train.weight_decay;

  std::map<std::string, ParamStore*> groups;
  for (auto& [name, store] : ck.model.groups()) groups[name] = store;
  std::size_t params_loaded = 0, params_expected = 0;
  for (auto& [name, store] : ck.model.groups()) params_expected += store->params().size();

  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::string kind = entry.at("kind").get<std::string>();
    std::vector<double> values = read(entry);
    if (kind == "adam_m" || kind == "adam_v") {
      auto& slot = ck.optimizer.slots()[name];
      (kind == "adam_m" ? slot.m : slot.v) = std::move(values);
      slot.steps = header.at("adam_steps").at(name).get<std::size_t>();
      continue;
    }
    const auto slash = name.find('/');
    auto g = slash == std::string::npos ? groups.end() : groups.find(name.substr(0, slash));
    if (g == groups.end()) throw DataError(origin + ": unknown tensor group in '" + name + "'");
    const std::string local = name.substr(slash + 1);
    if (kind == "param") {
      if (!g->second->has_param(local)) throw DataError(origin + ": unexpected parameter '" + name + "'");
      Tensor& t = g->second->param(local);
      if (t.numel() != values.size() || t.shape() != entry.at("shape").get<Shape>())
        throw DataError(origin + ": shape mismatch for '" + name + "'");
      std::copy(values.begin(), values.end(), t.mutable_data().begin());
      ++params_loaded;
    } else if (kind == "buffer") {
      auto& buffers = g->second->buffers();
      auto it = buffers.find(local);
      if (it == buffers.end() || it->second.size() != values.size())
        throw DataError(origin + ": unexpected buffer '" + name + "'");
      it->second = std::move(values);
    } else {
      throw DataError(origin + ": unknown tensor kind '" + kind + "'");
    }
  }
  if (params_loaded != params_expected)
    throw DataError(origin + ": holds " + std::to_string(params_loaded) + " of " +
                    std::to_string(params_expected) + " parameters");
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return parse_checkpoint(io::read_file(path), path.string());
}

}  // namespace hts
