#pragma once

// Episodic meta-testing with test-time augmentation and aggregation, 95%
// confidence intervals, cross-domain runs and forget-gate inspection.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hts/data.hpp"
#include "hts/model.hpp"
#include "hts/tensor.hpp"

namespace hts {

// Predicted class ids (members of episode.classes), one per query item.
inline std::vector<int> predict_query(const Model& model, const Episode& episode) {
  NoGradGuard no_grad;
  Model& m = const_cast<Model&>(model);  // eval mode reads parameters only
  const std::size_t n_way = episode.classes.size();
  if (model.head.kind == ClassifierKind::gnn && n_way != model.head.gnn.n_way)
    throw ShapeError("episode has " + std::to_string(n_way) + " classes but the gnn head expects " +
                     std::to_string(model.head.gnn.n_way));
  const bool tree = uses_tree(model.config.mode);
  const AugmentedEpisodeSet set =
      augment_episode(episode, tree ? model.operators : std::vector<PretextOperator>{});
  const EncodedEpisode enc = encode_episode(m, set, Mode::eval);
  Tensor support = enc.features.raw.support, query = enc.features.raw.query;
  if (tree) {
    const AggregatedEpisodes agg = aggregate_forest(model.aggregator, forest_from(enc, set));
    support = agg.levels[0].support;
    query = agg.levels[0].query;
  }
  const FewShotResult r =
      few_shot_forward(model.head, support, enc.features.raw.support_labels, query, {}, n_way);
  std::vector<int> out;
  for (std::size_t label : argmax_rows(r.scores)) out.push_back(episode.classes[label]);
  return out;
}

// 1.96 * population std / sqrt(T), in the same units as the input.
inline double ci95(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double t = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= t;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= t;
  return 1.96 * std::sqrt(var) / std::sqrt(t);
}

struct MetricsReport {
  std::string label;
  std::string source;  // dataset the model was trained on
  std::string target;  // dataset the episodes came from
  EpisodeSpec spec{};
  std::uint64_t seed = 0;
  std::vector<double> accuracies;  // per episode, in [0, 1]
  double mean_accuracy = 0.0;      // percent
  double ci95 = 0.0;               // percent
  std::string config_snapshot;

  std::size_t episodes() const { return accuracies.size(); }

  void finalize() {
    double sum = 0.0;
    for (double a : accuracies) sum += a;
    mean_accuracy = accuracies.empty() ? 0.0 : 100.0 * sum / static_cast<double>(accuracies.size());
    std::vector<double> pct;
    for (double a : accuracies) pct.push_back(100.0 * a);
    ci95 = hts::ci95(pct);
  }

  // "80.00 ± 0.00"
  std::string summary() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f \xC2\xB1 %.2f", mean_accuracy, ci95);
    return buf;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["label"] = label;
    j["source"] = source;
    j["target"] = target;
    j["n_way"] = spec.n_way;
    j["k_shot"] = spec.k_shot;
    j["q_query"] = spec.q_query;
    j["seed"] = seed;
    j["episodes"] = episodes();
    j["mean_accuracy"] = mean_accuracy;
    j["ci95"] = ci95;
    j["summary"] = summary();
    j["per_episode_accuracy"] = accuracies;
    j["config"] = config_snapshot;
    return j;
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.label = j.at("label").get<std::string>();
    r.source = j.at("source").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.spec.n_way = j.at("n_way").get<std::size_t>();
    r.spec.k_shot = j.at("k_shot").get<std::size_t>();
    r.spec.q_query = j.at("q_query").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.accuracies = j.at("per_episode_accuracy").get<std::vector<double>>();
    r.mean_accuracy = j.at("mean_accuracy").get<double>();
    r.ci95 = j.at("ci95").get<double>();
    r.config_snapshot = j.value("config", std::string());
    return r;
  }
};

inline double episode_accuracy(const std::vector<int>& predicted, const Episode& episode) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == episode.query[i].class_id;
  return predicted.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(predicted.size());
}

// Episode e draws from its own stream derived from (seed, e).
inline MetricsReport evaluate(const Model& model, const Dataset& dataset, const EpisodeSpec& spec,
                              std::size_t episodes, std::uint64_t seed) {
  if (dataset.num_classes() < spec.n_way)
    throw DataError("dataset '" + dataset.name() + "' has " + std::to_string(dataset.num_classes()) +
                    " classes, fewer than n_way = " + std::to_string(spec.n_way));
  MetricsReport report;
  report.spec = spec;
  report.seed = seed;
  report.target = dataset.name();
  report.source = dataset.name();
  report.accuracies.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng(derive_seed(seed, e));
    const Episode ep = sample_episode(dataset, spec, rng);
    report.accuracies.push_back(episode_accuracy(predict_query(model, ep), ep));
  }
  report.finalize();
  return report;
}

inline MetricsReport cross_domain_evaluate(const Model& model, const std::string& source_name,
                                           const Dataset& target, const EpisodeSpec& spec,
                                           std::size_t episodes, std::uint64_t seed) {
  if (!(target.image_shape() == model.config.input_shape))
    throw ShapeError("target dataset images are " + target.image_shape().str() +
                     " but the model expects " + model.config.input_shape.str());
  MetricsReport report = evaluate(model, target, spec, episodes, seed);
  report.source = source_name;
  report.label = source_name + "->" + target.name();
  return report;
}

struct GateMatrix {
  // values[root][child]: forget gate of that root's child averaged over the
  // hidden dimension.
  std::vector<std::vector<double>> values;
  std::vector<std::string> child_labels;  // "<task>:<pseudo-label>"
};

inline GateMatrix inspect_gates(const Model& model, const Episode& episode) {
  if (model.depth() == 0) throw ConfigError("no children to inspect: the model has no pretext tasks");
  NoGradGuard no_grad;
  Model& m = const_cast<Model&>(model);
  const AugmentedEpisodeSet set = augment_episode(episode, model.operators);
  const EncodedEpisode enc = encode_episode(m, set, Mode::eval);
  const FeatureForest forest = forest_from(enc, set);
  const AggregatedEpisodes agg = aggregate_forest(model.aggregator, forest);

  GateMatrix out;
  const auto& first = forest.trees.front();
  for (const std::size_t c : first.root().children) {
    const TreeNode& child = first.levels[1][c];
    out.child_labels.push_back(model.operators[0].variant_name + ":" +
                               model.operators[0].transforms[child.pseudo_label.value_or(0)].name);
  }
  const std::size_t h = agg.root_forget.row_size();
  for (std::size_t t = 0; t < forest.trees.size(); ++t) {
    std::vector<double> row;
    for (std::size_t k = agg.root_child_offsets[t]; k < agg.root_child_offsets[t + 1]; ++k) {
      double acc = 0.0;
      for (double v : agg.root_forget.row(k)) acc += v;
      row.push_back(acc / static_cast<double>(h));
    }
    out.values.push_back(std::move(row));
  }
  return out;
}

}  // namespace hts
