#pragma once

// Gated selection aggregation: a child-mean TreeLSTM cell applied bottom-up
// over every tree of a FeatureForest.
//
// For a node with own feature s and children m with states (h_m, c_m):
//   f_m  = sigmoid(W_f s + U_f h_m + b_f)          one forget gate per child
//   h_me = mean_m h_m
//   u    = tanh(W_u s + U_u h_me + b_u)
//   o    = sigmoid(W_o s + U_o h_me + b_o)
//   i    = sigmoid(W_i s + U_i h_me + b_i)
//   c    = i * u + mean_m (f_m * c_m)
//   h    = o * tanh(c)
// Leaves take h = s, c = 0. One parameter set is shared by all levels.

#include <cstdint>
#include <string>
#include <vector>

#include "hts/error.hpp"
#include "hts/ops.hpp"
#include "hts/params.hpp"
#include "hts/rng.hpp"
#include "hts/tree.hpp"

namespace hts {

struct AggregatorParams {
  std::size_t input_dim = 0;   // d
  std::size_t hidden_dim = 0;  // d_h
  ParamStore store;            // W_a (d_h x d), U_a (d_h x d_h), b_a (d_h), a in {i, o, f, u}

  static constexpr const char* gates = "iofu";
  const Tensor& W(char gate) const { return store.param(std::string("W_") + gate); }
  const Tensor& U(char gate) const { return store.param(std::string("U_") + gate); }
  const Tensor& b(char gate) const { return store.param(std::string("b_") + gate); }
};

inline AggregatorParams init_aggregator(std::size_t input_dim, std::size_t hidden_dim,
                                        std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0) throw ConfigError("aggregator dimensions must be positive");
  AggregatorParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  Rng rng(derive_seed(seed, 0x7EE157));
  for (const char* g = AggregatorParams::gates; *g; ++g) {
    const std::string s(1, *g);
    p.store.add_uniform("W_" + s, {hidden_dim, input_dim}, hidden_dim, rng);
    p.store.add_uniform("U_" + s, {hidden_dim, hidden_dim}, hidden_dim, rng);
    p.store.add_uniform("b_" + s, {hidden_dim}, hidden_dim, rng);
  }
  return p;
}

// Hidden and memory states for a batch of nodes, one row per node.
struct NodeState {
  Tensor h;
  Tensor c;
};

struct CellOutput {
  NodeState state;
  Tensor forget;  // one row per (parent, child) pair, in pair order
};

// Applies the cell to N parents at once. Parent p owns the child rows
// child_rows[offsets[p] .. offsets[p+1]) of `children`.
inline CellOutput cell_batch(const AggregatorParams& params, const Tensor& inputs,
                             const NodeState& children, const std::vector<std::size_t>& child_rows,
                             const std::vector<std::size_t>& offsets) {
  using namespace ops;
  if (inputs.rank() != 2 || inputs.dim(1) != params.input_dim)
    throw ShapeError("cell input " + shape_str(inputs.shape()) + " does not have width " +
                     std::to_string(params.input_dim));
  if (children.h.rank() != 2 || children.h.dim(1) != params.hidden_dim ||
      children.c.shape() != children.h.shape())
    throw ShapeError("child states must be (K, " + std::to_string(params.hidden_dim) + ")");
  const std::size_t parents = inputs.dim(0);
  if (offsets.size() != parents + 1 || offsets.back() != child_rows.size())
    throw ShapeError("cell child offsets do not match the parent count");
  for (std::size_t p = 0; p < parents; ++p)
    if (offsets[p + 1] <= offsets[p])
      throw Error("cell_step called on a node without children (parent " + std::to_string(p) + ")");

  std::vector<std::size_t> pair_parent;
  pair_parent.reserve(child_rows.size());
  for (std::size_t p = 0; p < parents; ++p)
    for (std::size_t k = offsets[p]; k < offsets[p + 1]; ++k) pair_parent.push_back(p);

  const Tensor child_h = gather_rows(children.h, child_rows);
  const Tensor child_c = gather_rows(children.c, child_rows);
  const Tensor h_mean = segment_mean(child_h, offsets);

  auto gate_pre = [&](char g, const Tensor& h) {
    return add(linear(inputs, params.W(g), params.b(g)), matmul_nt(h, params.U(g)));
  };
  const Tensor u = ops::tanh(gate_pre('u', h_mean));
  const Tensor o = sigmoid(gate_pre('o', h_mean));
  const Tensor i = sigmoid(gate_pre('i', h_mean));

  // Forget gates per (parent, child) pair.
  const Tensor ws_f = linear(inputs, params.W('f'), params.b('f'));
  const Tensor uh_f = matmul_nt(child_h, params.U('f'));
  const Tensor f = sigmoid(add(gather_rows(ws_f, pair_parent), uh_f));
  const Tensor kept = segment_mean(mul(f, child_c), offsets);

  const Tensor c = add(mul(i, u), kept);
  const Tensor h = mul(o, ops::tanh(c));
  return {{h, c}, f};
}

// Single node: s is (1, d), children holds K >= 1 rows.
inline NodeState cell_step(const AggregatorParams& params, const Tensor& s,
                           const NodeState& children) {
  const std::size_t k = children.h.defined() && children.h.rank() == 2 ? children.h.dim(0) : 0;
  if (k == 0) throw Error("cell_step needs at least one child; leaves carry their own feature");
  std::vector<std::size_t> rows(k);
  for (std::size_t m = 0; m < k; ++m) rows[m] = m;
  return cell_batch(params, s, children, rows, {0, k}).state;
}

struct AggregatedLevel {
  Tensor support;  // (M_r * l_k, d_h)
  Tensor query;    // (M_r * l_q, d_h)
  std::vector<std::size_t> support_pseudo;  // empty on level 0
  std::vector<std::size_t> query_pseudo;
};

struct AggregatedEpisodes {
  std::vector<AggregatedLevel> levels;  // r = 0..J
  // Level-0 forget gates, one row per (root, child) pair in tree order;
  // undefined when J = 0.
  Tensor root_forget;
  std::vector<std::size_t> root_child_offsets;
};

inline AggregatedEpisodes aggregate_forest(const AggregatorParams& params,
                                           const FeatureForest& forest) {
  const ForestShape& shape = forest.shape;
  const std::size_t depth = shape.depth(), items = shape.items();
  if (shape.feature_dim != params.input_dim || params.input_dim != params.hidden_dim)
    throw ShapeError("aggregator expects features of width " + std::to_string(params.input_dim) +
                     " with hidden width " + std::to_string(params.hidden_dim) +
                     ", forest has width " + std::to_string(shape.feature_dim));

  std::vector<Tensor> h(depth + 1);
  AggregatedEpisodes out;
  // Leaves carry their own feature and an empty memory cell.
  h[depth] = forest.level_features[depth];
  NodeState below{h[depth], Tensor::zeros(h[depth].shape())};

  for (std::size_t r = depth; r-- > 0;) {
    const std::size_t width = shape.width(r), child_width = shape.width(r + 1);
    std::vector<std::size_t> child_rows, offsets{0};
    for (std::size_t t = 0; t < items; ++t) {
      const auto& level = forest.trees[t].levels[r];
      if (level.size() != width) throw ShapeError("tree " + std::to_string(t) + " is malformed");
      for (const TreeNode& node : level) {
        if (node.children.empty())
          throw ShapeError("tree " + std::to_string(t) + " level " + std::to_string(r) +
                           " has a node without children");
        for (std::size_t c : node.children) {
          if (c >= child_width) throw ShapeError("child index out of range");
          child_rows.push_back(forest.trees[t].levels[r + 1][c].row);
        }
        offsets.push_back(child_rows.size());
      }
    }
    CellOutput step = cell_batch(params, forest.level_features[r], below, child_rows, offsets);
    h[r] = step.state.h;
    below = step.state;
    if (r == 0) {
      out.root_forget = step.forget;
      out.root_child_offsets = offsets;
    }
  }

  for (std::size_t r = 0; r <= depth; ++r) {
    const std::size_t width = shape.width(r);
    AggregatedLevel level;
    level.support = ops::slice_rows(h[r], 0, width * shape.support_items);
    level.query = ops::slice_rows(h[r], width * shape.support_items, width * shape.query_items);
    if (r > 0) {
      for (std::size_t t = 0; t < items; ++t)
        for (const TreeNode& node : forest.trees[t].levels[r])
          (t < shape.support_items ? level.support_pseudo : level.query_pseudo)
              .push_back(node.pseudo_label.value_or(0));
    }
    out.levels.push_back(std::move(level));
  }
  return out;
}

}  // namespace hts
