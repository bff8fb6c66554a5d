#pragma once

// Few-shot classifier heads operating on feature vectors: prototypical
// networks, matching networks, relation networks and a small GNN.

#include <cstdint>
#include <string>
#include <vector>

#include "hts/error.hpp"
#include "hts/ops.hpp"
#include "hts/params.hpp"
#include "hts/rng.hpp"
#include "hts/tensor.hpp"

namespace hts {

enum class ClassifierKind { protonet, matchingnet, relationnet, gnn };

inline std::string to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::protonet: return "protonet";
    case ClassifierKind::matchingnet: return "matchingnet";
    case ClassifierKind::relationnet: return "relationnet";
    case ClassifierKind::gnn: return "gnn";
  }
  return "?";
}

inline ClassifierKind parse_classifier(const std::string& name) {
  if (name == "protonet") return ClassifierKind::protonet;
  if (name == "matchingnet") return ClassifierKind::matchingnet;
  if (name == "relationnet") return ClassifierKind::relationnet;
  if (name == "gnn") return ClassifierKind::gnn;
  throw ConfigError("unknown classifier '" + name +
                    "' (valid: protonet, matchingnet, relationnet, gnn)");
}

// Lowest index wins ties.
inline std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  const std::size_t m = scores.rows(), n = scores.row_size();
  std::vector<std::size_t> out(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = scores.row(i);
    for (std::size_t j = 1; j < n; ++j)
      if (row[j] > row[out[i]]) out[i] = j;
  }
  return out;
}

struct Prototypes {
  Tensor vectors;  // (n, d), row c is the prototype of episode class c
  std::size_t n_way = 0;
};

// Means of the support rows per episode-local class label.
inline Prototypes compute_prototypes(const Tensor& support, const std::vector<std::size_t>& labels,
                                     std::size_t n_way) {
  if (support.rank() != 2 || support.dim(0) != labels.size())
    throw ShapeError("prototypes: " + std::to_string(labels.size()) + " labels for support " +
                     shape_str(support.shape()));
  std::vector<std::size_t> counts(n_way, 0);
  for (std::size_t y : labels) {
    if (y >= n_way) throw ShapeError("prototypes: label " + std::to_string(y) + " >= n_way");
    ++counts[y];
  }
  for (std::size_t c = 0; c < n_way; ++c)
    if (counts[c] == 0) throw ShapeError("prototypes: class " + std::to_string(c) + " has no support rows");
  std::vector<double> avg(n_way * labels.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    avg[labels[i] * labels.size() + i] = 1.0 / static_cast<double>(counts[labels[i]]);
  return {ops::matmul(Tensor::constant({n_way, labels.size()}, std::move(avg)), support), n_way};
}

struct FewShotResult {
  Tensor loss;    // undefined when no query labels were given
  Tensor scores;  // (l_q, n): probabilities, or relation scores for relationnet
};

inline FewShotResult protonet_loss(const Prototypes& protos, const Tensor& query,
                                   const std::vector<std::size_t>& query_labels) {
  const Tensor logits = ops::scale(ops::pairwise_sqdist(query, protos.vectors), -1.0);
  FewShotResult out;
  out.scores = ops::softmax_rows(logits);
  if (!query_labels.empty()) out.loss = ops::cross_entropy(logits, query_labels);
  return out;
}

inline Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t n) {
  std::vector<double> v(labels.size() * n, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) v[i * n + labels[i]] = 1.0;
  return Tensor::constant({labels.size(), n}, std::move(v));
}

// Attention over cosine similarities to every support item; class mass is
// the attention on that class's support items.
inline FewShotResult matchingnet_predict(const Tensor& support,
                                         const std::vector<std::size_t>& support_labels,
                                         const Tensor& query, std::size_t n_way,
                                         const std::vector<std::size_t>& query_labels = {}) {
  const Tensor cosine = ops::matmul_nt(ops::l2_normalize_rows(query), ops::l2_normalize_rows(support));
  const Tensor attention = ops::softmax_rows(cosine);
  FewShotResult out;
  out.scores = ops::matmul(attention, one_hot(support_labels, n_way));
  if (!query_labels.empty())
    out.loss = ops::scale(ops::mean(ops::log(ops::pick(out.scores, query_labels))), -1.0);
  return out;
}

// Two-layer comparator over concatenated (prototype, query) pairs ending in a
// sigmoid.
struct RelationHead {
  std::size_t feature_dim = 0;
  std::size_t hidden = 0;
  ParamStore store;
};

inline RelationHead init_relation_head(std::size_t feature_dim, std::size_t hidden, Rng& rng) {
  RelationHead head;
  head.feature_dim = feature_dim;
  head.hidden = hidden;
  head.store.add_uniform("relation.fc1.weight", {hidden, 2 * feature_dim}, 2 * feature_dim, rng);
  head.store.add_uniform("relation.fc1.bias", {hidden}, 2 * feature_dim, rng);
  head.store.add_uniform("relation.fc2.weight", {1, hidden}, hidden, rng);
  head.store.add_uniform("relation.fc2.bias", {1}, hidden, rng);
  return head;
}

// scores[i, c] = R([p_c, q_i]); loss = mean_i sum_c (r_ic - [y_i = c])^2.
inline FewShotResult relationnet_loss(const RelationHead& head, const Prototypes& protos,
                                      const Tensor& query,
                                      const std::vector<std::size_t>& query_labels = {}) {
  const std::size_t m = query.rows(), n = protos.n_way;
  std::vector<std::size_t> proto_idx, query_idx;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < n; ++c) {
      proto_idx.push_back(c);
      query_idx.push_back(i);
    }
  const Tensor pairs = ops::concat_cols({ops::gather_rows(protos.vectors, proto_idx),
                                         ops::gather_rows(query, query_idx)});
  Tensor x = ops::relu(ops::linear(pairs, head.store.param("relation.fc1.weight"),
                                   head.store.param("relation.fc1.bias")));
  x = ops::sigmoid(ops::linear(x, head.store.param("relation.fc2.weight"),
                               head.store.param("relation.fc2.bias")));
  FewShotResult out;
  out.scores = ops::reshape(x, {m, n});
  if (!query_labels.empty()) {
    const Tensor err = ops::sub(out.scores, one_hot(query_labels, n));
    out.loss = ops::scale(ops::sum(ops::square(err)), 1.0 / static_cast<double>(m));
  }
  return out;
}

// Message passing over a fully connected graph (self loops included) of all
// episode items.
struct GNNHead {
  std::size_t feature_dim = 0;
  std::size_t n_way = 0;
  std::size_t layers = 0;
  std::size_t width = 0;
  std::size_t edge_hidden = 0;
  ParamStore store;
};

inline GNNHead init_gnn_head(std::size_t feature_dim, std::size_t n_way, std::size_t layers,
                             std::size_t width, Rng& rng) {
  if (layers < 1) throw ConfigError("gnn needs at least one message-passing layer");
  GNNHead head;
  head.feature_dim = feature_dim;
  head.n_way = n_way;
  head.layers = layers;
  head.width = width;
  head.edge_hidden = width;
  auto& s = head.store;
  s.add_uniform("gnn.edge.fc1.weight", {head.edge_hidden, feature_dim}, feature_dim, rng);
  s.add_uniform("gnn.edge.fc1.bias", {head.edge_hidden}, feature_dim, rng);
  s.add_uniform("gnn.edge.fc2.weight", {1, head.edge_hidden}, head.edge_hidden, rng);
  s.add_uniform("gnn.edge.fc2.bias", {1}, head.edge_hidden, rng);
  const std::size_t init_width = feature_dim + n_way;
  std::size_t prev = init_width;
  for (std::size_t k = 1; k <= layers; ++k) {
    const std::size_t in = 2 * prev + init_width;
    const std::string p = "gnn.layer" + std::to_string(k);
    s.add_uniform(p + ".weight", {width, in}, in, rng);
    s.add_uniform(p + ".bias", {width}, in, rng);
    prev = width;
  }
  s.add_uniform("gnn.out.weight", {n_way, width}, width, rng);
  s.add_uniform("gnn.out.bias", {n_way}, width, rng);
  return head;
}

struct GNNTrace {
  Tensor edges;                  // (N, N) row-normalized edge weights
  std::vector<Tensor> messages;  // per layer, (N, width_{k-1})
  std::vector<Tensor> states;    // a_0 .. a_K
};

inline FewShotResult gnn_predict(const GNNHead& head, const Tensor& support,
                                 const std::vector<std::size_t>& support_labels,
                                 const Tensor& query,
                                 const std::vector<std::size_t>& query_labels = {},
                                 GNNTrace* trace = nullptr) {
  using namespace ops;
  const std::size_t n = head.n_way, ls = support.rows(), lq = query.rows();
  if (head.layers < 1) throw ConfigError("gnn needs at least one message-passing layer");
  for (std::size_t y : support_labels)
    if (y >= n) throw ShapeError("gnn: support label outside the head's " + std::to_string(n) + " classes");
  const auto& s = head.store;
  const Tensor features = concat_rows({support, query});
  std::vector<double> label_enc((ls + lq) * n, 1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < ls; ++i)
    for (std::size_t c = 0; c < n; ++c) label_enc[i * n + c] = c == support_labels[i] ? 1.0 : 0.0;
  const Tensor a0 = concat_cols({features, Tensor::constant({ls + lq, n}, std::move(label_enc))});

  Tensor e = relu(linear(pairwise_absdiff(features), s.param("gnn.edge.fc1.weight"),
                         s.param("gnn.edge.fc1.bias")));
  e = sigmoid(linear(e, s.param("gnn.edge.fc2.weight"), s.param("gnn.edge.fc2.bias")));
  const Tensor adj = row_normalize(reshape(e, {ls + lq, ls + lq}));

  Tensor a = a0;
  if (trace) {
    trace->edges = adj;
    trace->states.push_back(a0);
  }
  for (std::size_t k = 1; k <= head.layers; ++k) {
    const std::string p = "gnn.layer" + std::to_string(k);
    const Tensor msg = matmul(adj, a);
    a = leaky_relu(linear(concat_cols({a, msg, a0}), s.param(p + ".weight"), s.param(p + ".bias")),
                   0.1);
    if (trace) {
      trace->messages.push_back(msg);
      trace->states.push_back(a);
    }
  }
  const Tensor logits =
      linear(slice_rows(a, ls, lq), s.param("gnn.out.weight"), s.param("gnn.out.bias"));
  FewShotResult out;
  out.scores = softmax_rows(logits);
  if (!query_labels.empty()) out.loss = cross_entropy(logits, query_labels);
  return out;
}

struct HeadOptions {
  std::size_t relation_hidden = 64;
  std::size_t gnn_layers = 2;
  std::size_t gnn_width = 64;
};

// The selected head plus its trainable parameters (none for protonet and
// matchingnet).
struct ClassifierHead {
  ClassifierKind kind = ClassifierKind::protonet;
  std::size_t n_way = 0;
  RelationHead relation;
  GNNHead gnn;

  ParamStore* store() {
    if (kind == ClassifierKind::relationnet) return &relation.store;
    if (kind == ClassifierKind::gnn) return &gnn.store;
    return nullptr;
  }
  const ParamStore* store() const { return const_cast<ClassifierHead*>(this)->store(); }
};

inline ClassifierHead init_classifier(ClassifierKind kind, std::size_t feature_dim,
                                      std::size_t n_way, std::uint64_t seed,
                                      const HeadOptions& options = {}) {
  ClassifierHead head;
  head.kind = kind;
  head.n_way = n_way;
  Rng rng(derive_seed(seed, 0xC1A55));
  if (kind == ClassifierKind::relationnet)
    head.relation = init_relation_head(feature_dim, options.relation_hidden, rng);
  if (kind == ClassifierKind::gnn)
    head.gnn = init_gnn_head(feature_dim, n_way, options.gnn_layers, options.gnn_width, rng);
  return head;
}

// One few-shot episode through the selected head. With empty query_labels
// only scores are produced.
inline FewShotResult few_shot_forward(const ClassifierHead& head, const Tensor& support,
                                      const std::vector<std::size_t>& support_labels,
                                      const Tensor& query,
                                      const std::vector<std::size_t>& query_labels,
                                      std::size_t n_way) {
  if (head.kind == ClassifierKind::gnn && n_way != head.gnn.n_way)
    throw ShapeError("episode has " + std::to_string(n_way) + " classes but the " +
                     to_string(head.kind) + " head was built for " + std::to_string(head.gnn.n_way));
  switch (head.kind) {
    case ClassifierKind::protonet:
      return protonet_loss(compute_prototypes(support, support_labels, n_way), query, query_labels);
    case ClassifierKind::matchingnet:
      return matchingnet_predict(support, support_labels, query, n_way, query_labels);
    case ClassifierKind::relationnet:
      return relationnet_loss(head.relation, compute_prototypes(support, support_labels, n_way),
                              query, query_labels);
    case ClassifierKind::gnn:
      return gnn_predict(head.gnn, support, support_labels, query, query_labels);
  }
  throw Error("unreachable classifier kind");
}

}  // namespace hts
