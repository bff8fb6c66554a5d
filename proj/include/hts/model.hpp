#pragma once

// A complete few-shot model (encoder, tree aggregator, pseudo-label heads and
// classifier head) and the per-episode forward pass shared by training and
// evaluation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hts/aggregator.hpp"
#include "hts/classifiers.hpp"
#include "hts/data.hpp"
#include "hts/encoder.hpp"
#include "hts/objectives.hpp"
#include "hts/pretext.hpp"
#include "hts/tree.hpp"

namespace hts {

struct ModelConfig {
  Architecture architecture = Architecture::tiny_mlp;
  ImageShape input_shape{32, 32, 3};
  ClassifierKind classifier = ClassifierKind::protonet;
  ObjectiveMode mode = ObjectiveMode::baseline;
  std::vector<std::string> pretext_tasks;
  std::vector<double> beta;  // one per task
  std::size_t n_way = 5;
  EncoderOptions encoder{};
  HeadOptions head{};
  std::uint64_t seed = 0;
};

struct Model {
  ModelConfig config;
  std::vector<PretextOperator> operators;
  EncoderParams encoder;
  AggregatorParams aggregator;
  SSLHeads ssl;
  ClassifierHead head;

  // Parameter groups by checkpoint prefix.
  std::vector<std::pair<std::string, ParamStore*>> groups() {
    std::vector<std::pair<std::string, ParamStore*>> out{
        {"encoder", &encoder.store}, {"aggregator", &aggregator.store}, {"ssl", &ssl.store}};
    if (ParamStore* s = head.store()) out.emplace_back("head", s);
    return out;
  }
  std::vector<std::pair<std::string, const ParamStore*>> groups() const {
    std::vector<std::pair<std::string, const ParamStore*>> out;
    for (auto& [name, store] : const_cast<Model*>(this)->groups()) out.emplace_back(name, store);
    return out;
  }

  void zero_grad() {
    for (auto& [name, store] : groups()) store->zero_grad();
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 0;
    for (const auto& [name, store] : groups()) h = mix_seed(h ^ store->fingerprint());
    return h;
  }

  // Deep copy with fresh parameter nodes.
  Model clone() const {
    Model m;
    m.config = config;
    m.operators = operators;
    m.encoder = EncoderParams{encoder.architecture, encoder.input_shape, encoder.output_dim,
                              encoder.options, encoder.store.clone()};
    m.aggregator = AggregatorParams{aggregator.input_dim, aggregator.hidden_dim,
                                    aggregator.store.clone()};
    m.ssl = SSLHeads{ssl.widths, ssl.store.clone()};
    m.head.kind = head.kind;
    m.head.n_way = head.n_way;
    m.head.relation = RelationHead{head.relation.feature_dim, head.relation.hidden,
                                   head.relation.store.clone()};
    m.head.gnn = GNNHead{head.gnn.feature_dim, head.gnn.n_way, head.gnn.layers, head.gnn.width,
                         head.gnn.edge_hidden, head.gnn.store.clone()};
    return m;
  }

  std::size_t depth() const { return operators.size(); }
};

inline Model init_model(const ModelConfig& config) {
  Model m;
  m.config = config;
  m.operators = make_operators(config.pretext_tasks);
  if (!config.beta.empty()) check_beta(config.beta, m.operators.size());
  // Independent seed streams per component, so e.g. adding pretext heads
  // leaves the encoder initialization unchanged.
  m.encoder = init_encoder(config.architecture, config.input_shape, derive_seed(config.seed, 1),
                           config.encoder);
  const std::size_t d = m.encoder.output_dim;
  m.aggregator = init_aggregator(d, d, derive_seed(config.seed, 2));
  std::vector<std::size_t> widths;
  for (const auto& op : m.operators) widths.push_back(op.size());
  m.ssl = init_ssl_heads(d, widths, derive_seed(config.seed, 3));
  m.head = init_classifier(config.classifier, d, config.n_way, derive_seed(config.seed, 4),
                           config.head);
  return m;
}

// Encoder outputs for one (possibly augmented) episode. `all` holds the raw
// support, raw query, then for each task its augmented support and query.
struct EncodedEpisode {
  Tensor all;
  EpisodeFeatures features;
  std::vector<std::size_t> task_offsets;  // first row of each task's block in `all`
};

inline EncodedEpisode encode_episode(Model& model, const AugmentedEpisodeSet& set, Mode mode) {
  const Episode& raw = set.raw;
  std::vector<const Image*> images;
  for (const auto& s : raw.support) images.push_back(&s.image);
  for (const auto& q : raw.query) images.push_back(&q.image);
  for (const auto& task : set.per_task) {
    for (const auto& s : task.support) images.push_back(&s.image);
    for (const auto& q : task.query) images.push_back(&q.image);
  }
  const Tensor batch = stack_images(images, [](const Image* p) -> const Image& { return *p; });

  EncodedEpisode out;
  out.all = encode(model.encoder, batch, mode);
  const std::size_t ls = raw.support.size(), lq = raw.query.size();
  auto& f = out.features;
  f.n_way = raw.classes.size();
  f.raw.support = ops::slice_rows(out.all, 0, ls);
  f.raw.query = ops::slice_rows(out.all, ls, lq);
  f.raw.support_labels = raw.support_labels();
  f.raw.query_labels = raw.query_labels();
  std::size_t offset = ls + lq;
  for (const auto& task : set.per_task) {
    out.task_offsets.push_back(offset);
    TaskFeatures t;
    t.support = ops::slice_rows(out.all, offset, task.support.size());
    t.query = ops::slice_rows(out.all, offset + task.support.size(), task.query.size());
    for (const auto& s : task.support) t.support_pseudo.push_back(s.pseudo_label);
    for (const auto& q : task.query) t.query_pseudo.push_back(q.pseudo_label);
    offset += task.support.size() + task.query.size();
    f.tasks.push_back(std::move(t));
  }
  return out;
}

inline FeatureForest forest_from(const EncodedEpisode& enc, const AugmentedEpisodeSet& set) {
  const std::size_t items = set.raw.size();
  std::vector<Tensor> aug;
  std::vector<std::vector<std::size_t>> pseudo;
  for (std::size_t j = 0; j < set.per_task.size(); ++j) {
    const auto& task = set.per_task[j];
    aug.push_back(ops::slice_rows(enc.all, enc.task_offsets[j], task.support.size() + task.query.size()));
    std::vector<std::size_t> labels = enc.features.tasks[j].support_pseudo;
    const auto& q = enc.features.tasks[j].query_pseudo;
    labels.insert(labels.end(), q.begin(), q.end());
    pseudo.push_back(std::move(labels));
  }
  return build_forest(ops::slice_rows(enc.all, 0, items), aug, pseudo, set.raw.support.size());
}

// The active objective on one episode.
inline Tensor episode_loss(Model& model, const Episode& episode, Mode mode = Mode::train) {
  const ObjectiveMode objective = model.config.mode;
  const bool augmented = objective != ObjectiveMode::baseline;
  const AugmentedEpisodeSet set =
      augment_episode(episode, augmented ? model.operators : std::vector<PretextOperator>{});
  const EncodedEpisode enc = encode_episode(model, set, mode);
  const EpisodeFeatures& f = enc.features;
  switch (objective) {
    case ObjectiveMode::baseline: return loss_fsl(model.head, f.raw, f.n_way);
    case ObjectiveMode::da: return loss_da(model.head, f);
    case ObjectiveMode::ssl: return loss_ssl(model.head, model.ssl, f, model.config.beta);
    case ObjectiveMode::hts_da:
    case ObjectiveMode::hts_ssl: {
      const AggregatedEpisodes agg = aggregate_forest(model.aggregator, forest_from(enc, set));
      if (objective == ObjectiveMode::hts_da)
        return loss_hts_da(model.head, agg, f.raw.support_labels, f.raw.query_labels, f.n_way);
      return loss_hts_ssl(model.head, model.ssl, agg, f.raw.support_labels, f.raw.query_labels,
                          f.n_way, model.config.beta);
    }
  }
  throw Error("unreachable objective mode");
}

}  // namespace hts
