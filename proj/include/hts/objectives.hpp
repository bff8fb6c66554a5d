#pragma once

// Training objectives: plain few-shot loss, DA, SSL and their tree-aggregated
// counterparts, plus the per-task pseudo-label heads.

#include <cstdint>
#include <string>
#include <vector>

#include "hts/aggregator.hpp"
#include "hts/classifiers.hpp"
#include "hts/error.hpp"
#include "hts/ops.hpp"
#include "hts/params.hpp"
#include "hts/rng.hpp"

namespace hts {

enum class ObjectiveMode { baseline, da, ssl, hts_da, hts_ssl };

inline std::string to_string(ObjectiveMode m) {
  switch (m) {
    case ObjectiveMode::baseline: return "baseline";
    case ObjectiveMode::da: return "da";
    case ObjectiveMode::ssl: return "ssl";
    case ObjectiveMode::hts_da: return "hts-da";
    case ObjectiveMode::hts_ssl: return "hts-ssl";
  }
  return "?";
}

inline ObjectiveMode parse_objective(const std::string& name) {
  if (name == "baseline") return ObjectiveMode::baseline;
  if (name == "da") return ObjectiveMode::da;
  if (name == "ssl") return ObjectiveMode::ssl;
  if (name == "hts-da") return ObjectiveMode::hts_da;
  if (name == "hts-ssl") return ObjectiveMode::hts_ssl;
  throw ConfigError("unknown mode '" + name + "' (valid: baseline, da, ssl, hts-da, hts-ssl)");
}

inline bool uses_tree(ObjectiveMode m) {
  return m == ObjectiveMode::hts_da || m == ObjectiveMode::hts_ssl;
}

struct ObjectiveConfig {
  ObjectiveMode mode = ObjectiveMode::baseline;
  std::vector<double> beta;  // one weight per pretext task
};

// Linear pseudo-label classifiers, one per pretext task: task j maps a
// feature to M_j logits. Tree levels r >= 1 reuse the head of task r.
struct SSLHeads {
  std::vector<std::size_t> widths;  // M_j
  ParamStore store;

  std::size_t size() const { return widths.size(); }
  const Tensor& weight(std::size_t task) const {
    return store.param("ssl.task" + std::to_string(task + 1) + ".weight");
  }
  const Tensor& bias(std::size_t task) const {
    return store.param("ssl.task" + std::to_string(task + 1) + ".bias");
  }
};

inline SSLHeads init_ssl_heads(std::size_t feature_dim, const std::vector<std::size_t>& widths,
                               std::uint64_t seed) {
  SSLHeads heads;
  heads.widths = widths;
  Rng rng(derive_seed(seed, 0x551));
  for (std::size_t j = 0; j < widths.size(); ++j) {
    const std::string p = "ssl.task" + std::to_string(j + 1);
    heads.store.add_uniform(p + ".weight", {widths[j], feature_dim}, feature_dim, rng);
    heads.store.add_uniform(p + ".bias", {widths[j]}, feature_dim, rng);
  }
  return heads;
}

// One episode's support/query features with episode-local class labels.
struct LabeledEpisode {
  Tensor support;
  Tensor query;
  std::vector<std::size_t> support_labels;
  std::vector<std::size_t> query_labels;
};

// Augmented features of one pretext task; rows follow the contiguous
// per-item block order, so class labels repeat each raw label M_j times.
struct TaskFeatures {
  Tensor support;
  Tensor query;
  std::vector<std::size_t> support_pseudo;
  std::vector<std::size_t> query_pseudo;
};

struct EpisodeFeatures {
  LabeledEpisode raw;
  std::size_t n_way = 0;
  std::vector<TaskFeatures> tasks;
};

inline std::vector<std::size_t> repeat_each(const std::vector<std::size_t>& labels,
                                            std::size_t times) {
  std::vector<std::size_t> out;
  out.reserve(labels.size() * times);
  for (std::size_t y : labels)
    for (std::size_t t = 0; t < times; ++t) out.push_back(y);
  return out;
}

inline Tensor loss_fsl(const ClassifierHead& head, const LabeledEpisode& ep, std::size_t n_way) {
  return few_shot_forward(head, ep.support, ep.support_labels, ep.query, ep.query_labels, n_way).loss;
}

// Mean cross-entropy of pseudo-label head `task` over support and query rows.
inline Tensor pseudo_label_loss(const SSLHeads& heads, std::size_t task, const Tensor& support,
                                const Tensor& query, const std::vector<std::size_t>& support_pseudo,
                                const std::vector<std::size_t>& query_pseudo) {
  if (task >= heads.size()) throw ShapeError("no pseudo-label head for task " + std::to_string(task + 1));
  std::vector<std::size_t> labels = support_pseudo;
  labels.insert(labels.end(), query_pseudo.begin(), query_pseudo.end());
  for (std::size_t y : labels)
    if (y >= heads.widths[task])
      throw ShapeError("pseudo-label " + std::to_string(y) + " out of range for task " +
                       std::to_string(task + 1) + " with " + std::to_string(heads.widths[task]) +
                       " transforms");
  const Tensor x = ops::concat_rows({support, query});
  return ops::cross_entropy(ops::linear(x, heads.weight(task), heads.bias(task)), labels);
}

inline void check_beta(const std::vector<double>& beta, std::size_t tasks) {
  if (beta.size() != tasks)
    throw ConfigError("beta has " + std::to_string(beta.size()) + " entries for " +
                      std::to_string(tasks) + " pretext tasks");
  for (double b : beta)
    if (!(b >= 0.0)) throw ConfigError("beta entries must be >= 0");
}

// Average of the few-shot loss over the raw episode and each augmented
// episode; every augmented episode forms its own prototypes.
inline Tensor loss_da(const ClassifierHead& head, const EpisodeFeatures& f) {
  Tensor total = loss_fsl(head, f.raw, f.n_way);
  for (const TaskFeatures& t : f.tasks) {
    const std::size_t m = t.support.rows() / f.raw.support.rows();
    const LabeledEpisode aug{t.support, t.query, repeat_each(f.raw.support_labels, m),
                             repeat_each(f.raw.query_labels, m)};
    total = ops::add(total, loss_fsl(head, aug, f.n_way));
  }
  if (f.tasks.empty()) return total;
  return ops::scale(total, 1.0 / static_cast<double>(f.tasks.size() + 1));
}

// Raw few-shot loss plus beta-weighted pseudo-label losses on the augmented
// (unaggregated) features.
inline Tensor loss_ssl(const ClassifierHead& head, const SSLHeads& heads, const EpisodeFeatures& f,
                       const std::vector<double>& beta) {
  check_beta(beta, f.tasks.size());
  Tensor total = loss_fsl(head, f.raw, f.n_way);
  for (std::size_t j = 0; j < f.tasks.size(); ++j) {
    const TaskFeatures& t = f.tasks[j];
    total = ops::add(total, ops::scale(pseudo_label_loss(heads, j, t.support, t.query,
                                                         t.support_pseudo, t.query_pseudo),
                                       beta[j]));
  }
  return total;
}

// Few-shot loss on the aggregated root nodes only.
inline Tensor loss_hts_da(const ClassifierHead& head, const AggregatedEpisodes& agg,
                          const std::vector<std::size_t>& support_labels,
                          const std::vector<std::size_t>& query_labels, std::size_t n_way) {
  if (agg.levels.empty()) throw ShapeError("aggregated episodes have no root level");
  return loss_fsl(head, {agg.levels[0].support, agg.levels[0].query, support_labels, query_labels},
                  n_way);
}

// Root few-shot loss plus beta-weighted pseudo-label losses on every
// aggregated level r >= 1.
inline Tensor loss_hts_ssl(const ClassifierHead& head, const SSLHeads& heads,
                           const AggregatedEpisodes& agg,
                           const std::vector<std::size_t>& support_labels,
                           const std::vector<std::size_t>& query_labels, std::size_t n_way,
                           const std::vector<double>& beta) {
  const std::size_t depth = agg.levels.empty() ? 0 : agg.levels.size() - 1;
  check_beta(beta, depth);
  Tensor total = loss_hts_da(head, agg, support_labels, query_labels, n_way);
  for (std::size_t r = 1; r <= depth; ++r) {
    const AggregatedLevel& level = agg.levels[r];
    total = ops::add(total, ops::scale(pseudo_label_loss(heads, r - 1, level.support, level.query,
                                                         level.support_pseudo, level.query_pseudo),
                                       beta[r - 1]));
  }
  return total;
}

}  // namespace hts
