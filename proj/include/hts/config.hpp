#pragma once

// Run configuration: a flat `key = value` text format with a typed schema.
// Lines starting with '#' are comments. Unknown or repeated keys are errors.

#include <charconv>
#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hts/classifiers.hpp"
#include "hts/data.hpp"
#include "hts/encoder.hpp"
#include "hts/error.hpp"
#include "hts/model.hpp"
#include "hts/objectives.hpp"
#include "hts/pretext.hpp"

namespace hts {

struct TrainConfig {
  EpisodeSpec episode{5, 1, 15, 0};
  std::vector<std::string> pretext_tasks;
  ObjectiveMode mode = ObjectiveMode::baseline;
  ClassifierKind classifier = ClassifierKind::protonet;
  Architecture encoder = Architecture::tiny_mlp;
  std::vector<double> beta{0.1};
  std::size_t embedding_dim = 64;
  std::size_t mlp_hidden = 64;
  std::size_t relation_hidden = 64;
  std::size_t gnn_layers = 2;
  std::size_t gnn_width = 64;
  std::size_t episodes_total = 2000;
  std::size_t episodes_per_batch = 4;
  double learning_rate = 1e-3;
  std::size_t lr_decay_every = 15000;
  double lr_decay_factor = 0.1;
  double weight_decay = 5e-4;
  std::size_t val_every = 500;
  std::size_t val_episodes = 100;
  std::uint64_t seed = 0;

  // beta broadcast to one entry per task.
  std::vector<double> task_beta() const {
    if (beta.size() == 1) return std::vector<double>(pretext_tasks.size(), beta[0]);
    return beta;
  }
};

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | csv
  std::size_t resolution = 16;
  std::string data_root;
  std::string train_manifest;
  std::string val_manifest;
  std::string test_manifest;
  std::size_t synthetic_classes = 5;
  std::size_t synthetic_per_class = 20;
  std::uint64_t synthetic_seed = 0;
};

struct RunConfig {
  TrainConfig train;
  DataConfig data;
  std::size_t test_episodes = 500;
  std::uint64_t test_seed = 1;
  std::string output_dir = "runs/default";

  ModelConfig model_config() const {
    ModelConfig m;
    m.architecture = train.encoder;
    m.input_shape = {data.resolution, data.resolution, 3};
    m.classifier = train.classifier;
    m.mode = train.mode;
    m.pretext_tasks = train.pretext_tasks;
    m.beta = train.task_beta();
    m.n_way = train.episode.n_way;
    m.encoder.embedding_dim = train.embedding_dim;
    m.encoder.mlp_hidden = train.mlp_hidden;
    m.head.relation_hidden = train.relation_hidden;
    m.head.gnn_layers = train.gnn_layers;
    m.head.gnn_width = train.gnn_width;
    m.seed = train.seed;
    return m;
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& values, std::function<std::string(const T&)> fmt) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + fmt(values[i]);
  return out;
}

struct Field {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define HTS_UINT_FIELD(name, member, help)                                             \
  Field {                                                                              \
    name, help,                                                                        \
        [](RunConfig& c, const std::string& v) { c.member = parse_uint(name, v); },    \
        [](const RunConfig& c) { return std::to_string(c.member); }                    \
  }
#define HTS_DOUBLE_FIELD(name, member, help)                                           \
  Field {                                                                              \
    name, help,                                                                        \
        [](RunConfig& c, const std::string& v) { c.member = parse_double(name, v); },  \
        [](const RunConfig& c) { return format_double(c.member); }                     \
  }
#define HTS_STRING_FIELD(name, member, help)                                           \
  Field {                                                                              \
    name, help, [](RunConfig& c, const std::string& v) { c.member = v; },              \
        [](const RunConfig& c) { return c.member; }                                    \
  }

inline const std::vector<Field>& schema() {
  static const std::vector<Field> fields{
      HTS_STRING_FIELD("dataset", data.kind, "synthetic | csv"),
      HTS_UINT_FIELD("resolution", data.resolution, "square image side after resizing"),
      HTS_STRING_FIELD("data_root", data.data_root, "base directory for image filenames (default: manifest directory)"),
      HTS_STRING_FIELD("train_manifest", data.train_manifest, "CSV manifest (filename,label)"),
      HTS_STRING_FIELD("val_manifest", data.val_manifest, "CSV manifest (filename,label)"),
      HTS_STRING_FIELD("test_manifest", data.test_manifest, "CSV manifest (filename,label)"),
      HTS_UINT_FIELD("synthetic_classes", data.synthetic_classes, "classes per synthetic split"),
      HTS_UINT_FIELD("synthetic_per_class", data.synthetic_per_class, "images per synthetic class"),
      HTS_UINT_FIELD("synthetic_seed", data.synthetic_seed, "train split seed; val/test use +1/+2"),
      HTS_UINT_FIELD("n_way", train.episode.n_way, "classes per episode"),
      HTS_UINT_FIELD("k_shot", train.episode.k_shot, "support images per class"),
      HTS_UINT_FIELD("q_query", train.episode.q_query, "query images per class"),
      Field{"pretext_tasks", "comma-separated operator names, one tree level each",
            [](RunConfig& c, const std::string& v) { c.train.pretext_tasks = split_list(v); },
            [](const RunConfig& c) {
              return join<std::string>(c.train.pretext_tasks, [](const std::string& s) { return s; });
            }},
      Field{"mode", "baseline | da | ssl | hts-da | hts-ssl",
            [](RunConfig& c, const std::string& v) { c.train.mode = parse_objective(v); },
            [](const RunConfig& c) { return to_string(c.train.mode); }},
      Field{"classifier", "protonet | matchingnet | relationnet | gnn",
            [](RunConfig& c, const std::string& v) { c.train.classifier = parse_classifier(v); },
            [](const RunConfig& c) { return to_string(c.train.classifier); }},
      Field{"encoder", "conv4 | resnet12 | tiny-mlp",
            [](RunConfig& c, const std::string& v) { c.train.encoder = parse_architecture(v); },
            [](const RunConfig& c) { return to_string(c.train.encoder); }},
      Field{"beta", "pseudo-label loss weights, one per task or a single shared value",
            [](RunConfig& c, const std::string& v) {
              c.train.beta.clear();
              for (const auto& s : split_list(v)) c.train.beta.push_back(parse_double("beta", s));
            },
            [](const RunConfig& c) {
              return join<double>(c.train.beta, [](const double& d) { return format_double(d); });
            }},
      HTS_UINT_FIELD("embedding_dim", train.embedding_dim, "encoder output width"),
      HTS_UINT_FIELD("mlp_hidden", train.mlp_hidden, "tiny-mlp hidden width"),
      HTS_UINT_FIELD("relation_hidden", train.relation_hidden, "relation module hidden width"),
      HTS_UINT_FIELD("gnn_layers", train.gnn_layers, "message-passing rounds"),
      HTS_UINT_FIELD("gnn_width", train.gnn_width, "gnn node state width"),
      HTS_UINT_FIELD("episodes_total", train.episodes_total, "training episodes"),
      HTS_UINT_FIELD("episodes_per_batch", train.episodes_per_batch, "episodes per optimizer step"),
      HTS_DOUBLE_FIELD("learning_rate", train.learning_rate, "initial Adam learning rate"),
      HTS_UINT_FIELD("lr_decay_every", train.lr_decay_every, "episodes between decays (0 = never)"),
      HTS_DOUBLE_FIELD("lr_decay_factor", train.lr_decay_factor, "multiplier per decay"),
      HTS_DOUBLE_FIELD("weight_decay", train.weight_decay, "L2 weight decay"),
      HTS_UINT_FIELD("val_every", train.val_every, "episodes between validations (0 = never)"),
      HTS_UINT_FIELD("val_episodes", train.val_episodes, "episodes per validation pass"),
      HTS_UINT_FIELD("test_episodes", test_episodes, "episodes for the final evaluation"),
      HTS_UINT_FIELD("test_seed", test_seed, "seed of the final evaluation"),
      HTS_UINT_FIELD("seed", train.seed, "training seed"),
      HTS_STRING_FIELD("output_dir", output_dir, "where artifacts are written"),
  };
  return fields;
}

#undef HTS_UINT_FIELD
#undef HTS_DOUBLE_FIELD
#undef HTS_STRING_FIELD

}  // namespace config_detail

// Structural checks that do not touch the file system.
inline void validate(const RunConfig& c) {
  const auto& t = c.train;
  if (c.data.kind != "synthetic" && c.data.kind != "csv")
    throw ConfigError("dataset: expected 'synthetic' or 'csv', got '" + c.data.kind + "'");
  if (c.data.resolution < 8) throw ConfigError("resolution: must be >= 8");
  if (t.episode.n_way < 1) throw ConfigError("n_way: must be >= 1");
  if (t.episode.k_shot < 1) throw ConfigError("k_shot: must be >= 1");
  if (t.episode.q_query < 1) throw ConfigError("q_query: must be >= 1");
  if (t.episodes_total < 1) throw ConfigError("episodes_total: must be >= 1");
  if (t.episodes_per_batch < 1) throw ConfigError("episodes_per_batch: must be >= 1");
  if (!(t.learning_rate > 0.0)) throw ConfigError("learning_rate: must be > 0");
  if (!(t.weight_decay >= 0.0)) throw ConfigError("weight_decay: must be >= 0");
  if (t.gnn_layers < 1) throw ConfigError("gnn_layers: must be >= 1");
  if (t.embedding_dim < 1) throw ConfigError("embedding_dim: must be >= 1");
  if (t.val_every > 0 && t.val_episodes < 1) throw ConfigError("val_episodes: must be >= 1");
  for (const auto& name : t.pretext_tasks) make_operator(name);
  if (t.beta.size() != 1 && t.beta.size() != t.pretext_tasks.size())
    throw ConfigError("beta: expected 1 or " + std::to_string(t.pretext_tasks.size()) +
                      " values, got " + std::to_string(t.beta.size()));
  for (double b : t.beta)
    if (!(b >= 0.0)) throw ConfigError("beta: values must be >= 0");
  if ((t.mode == ObjectiveMode::ssl || t.mode == ObjectiveMode::da) && t.pretext_tasks.empty())
    throw ConfigError("pretext_tasks: mode " + to_string(t.mode) + " needs at least one task");
  if (c.data.kind == "csv") {
    for (const auto& [key, value] : {std::pair{"train_manifest", c.data.train_manifest},
                                     std::pair{"val_manifest", c.data.val_manifest},
                                     std::pair{"test_manifest", c.data.test_manifest}})
      if (value.empty()) throw ConfigError(std::string(key) + ": required when dataset = csv");
  }
  if (c.output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, const config_detail::Field*> by_key;
  for (const auto& f : config_detail::schema()) by_key[f.key] = &f;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = config_detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = config_detail::trim(stripped.substr(0, eq));
    const std::string value = config_detail::trim(stripped.substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(key + ": unknown configuration key");
    if (!seen.insert(key).second) throw ConfigError(key + ": given more than once");
    it->second->set(cfg, value);
  }
  validate(cfg);
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Canonical text form: every key in schema order. parse_config(to_text(c))
// reproduces c.
inline std::string to_text(const RunConfig& c) {
  std::string out;
  for (const auto& f : config_detail::schema()) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

inline std::string config_help() {
  std::string out;
  for (const auto& f : config_detail::schema()) out += "  " + f.key + ": " + f.help + "\n";
  return out;
}

// Relative output directories are placed under $HTS_OUTPUT_ROOT when set.
inline std::filesystem::path resolve_output_dir(const RunConfig& c) {
  std::filesystem::path out(c.output_dir);
  if (const char* root = std::getenv("HTS_OUTPUT_ROOT"); root && *root && out.is_relative())
    out = std::filesystem::path(root) / out;
  return out;
}

// Name of the training split, without loading it.
inline std::string train_split_name(const RunConfig& c) {
  if (c.data.kind == "synthetic") return "synthetic-" + std::to_string(c.data.synthetic_seed);
  return std::filesystem::path(c.data.train_manifest).stem().string();
}

struct Datasets {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Loads or generates the three splits. Missing manifests are reported as
// configuration errors naming the key.
inline Datasets load_datasets(const RunConfig& c) {
  if (c.data.kind == "synthetic") {
    const auto& d = c.data;
    return {make_synthetic_dataset(d.synthetic_classes, d.synthetic_per_class, d.resolution, d.synthetic_seed),
            make_synthetic_dataset(d.synthetic_classes, d.synthetic_per_class, d.resolution, d.synthetic_seed + 1),
            make_synthetic_dataset(d.synthetic_classes, d.synthetic_per_class, d.resolution, d.synthetic_seed + 2)};
  }
  auto load = [&c](const char* key, const std::string& manifest) {
    const std::filesystem::path path(manifest);
    if (!std::filesystem::exists(path))
      throw ConfigError(std::string(key) + ": manifest not found at " + path.string());
    return load_split(path, c.data.resolution, c.data.data_root);
  };
  return {load("train_manifest", c.data.train_manifest), load("val_manifest", c.data.val_manifest),
          load("test_manifest", c.data.test_manifest)};
}

}  // namespace hts
