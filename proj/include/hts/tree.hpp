#pragma once

// Hierarchical tree construction: one tree per raw image, with the
// augmentations of pretext task j on level j.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hts/error.hpp"
#include "hts/tensor.hpp"

namespace hts {

struct TreeNode {
  std::size_t row = 0;  // row of this node in FeatureForest::level_features[level]
  std::optional<std::size_t> pseudo_label;
  std::size_t task_index = 0;  // equals the level
  std::size_t source_item = 0;
  std::vector<std::size_t> children;  // positions within the tree's next level
};

struct FeatureTree {
  std::vector<std::vector<TreeNode>> levels;

  const TreeNode& root() const { return levels.front().front(); }
  std::size_t node_count() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += l.size();
    return n;
  }
};

struct ForestShape {
  std::size_t support_items = 0;  // l_k
  std::size_t query_items = 0;    // l_q
  std::vector<std::size_t> branching;  // M_1..M_J
  std::size_t feature_dim = 0;

  std::size_t depth() const { return branching.size(); }  // J
  std::size_t items() const { return support_items + query_items; }
  // Nodes per tree on level r (M_0 = 1).
  std::size_t width(std::size_t level) const { return level == 0 ? 1 : branching.at(level - 1); }
};

// Trees for support items first, then query items. Node features are rows of
// the per-level tensors, kept in item-major order so gradients reach the
// encoder.
struct FeatureForest {
  ForestShape shape;
  std::vector<Tensor> level_features;  // level r: (M_r * items, d)
  std::vector<FeatureTree> trees;

  std::span<const double> feature(std::size_t tree, std::size_t level, std::size_t node) const {
    return level_features.at(level).row(trees.at(tree).levels.at(level).at(node).row);
  }
  std::size_t node_count() const {
    std::size_t n = 0;
    for (const auto& t : trees) n += t.node_count();
    return n;
  }
};

// raw_features: (items, d). aug_features[j]: (M_j * items, d) with each raw
// item's M_j augmentations contiguous. pseudo_labels[j] has one entry per row.
inline FeatureForest build_forest(const Tensor& raw_features, const std::vector<Tensor>& aug_features,
                                  const std::vector<std::vector<std::size_t>>& pseudo_labels,
                                  std::size_t support_items) {
  if (raw_features.rank() != 2) throw ShapeError("raw features must be a matrix");
  const std::size_t items = raw_features.dim(0), d = raw_features.dim(1);
  if (support_items > items) throw ShapeError("support item count exceeds feature rows");
  if (pseudo_labels.size() != aug_features.size())
    throw ShapeError("got " + std::to_string(aug_features.size()) + " augmented feature sets but " +
                     std::to_string(pseudo_labels.size()) + " pseudo-label sets");

  FeatureForest forest;
  forest.shape.support_items = support_items;
  forest.shape.query_items = items - support_items;
  forest.shape.feature_dim = d;
  forest.level_features.push_back(raw_features);
  for (std::size_t j = 0; j < aug_features.size(); ++j) {
    const Tensor& a = aug_features[j];
    const std::string where = "pretext task " + std::to_string(j + 1) + ": ";
    if (a.rank() != 2 || a.dim(1) != d)
      throw ShapeError(where + "features " + shape_str(a.shape()) + " do not have width " +
                       std::to_string(d));
    if (items == 0 || a.dim(0) % items != 0 || a.dim(0) == 0)
      throw ShapeError(where + std::to_string(a.dim(0)) + " rows are not a positive multiple of " +
                       std::to_string(items) + " raw items");
    if (pseudo_labels[j].size() != a.dim(0))
      throw ShapeError(where + std::to_string(pseudo_labels[j].size()) + " pseudo-labels for " +
                       std::to_string(a.dim(0)) + " rows");
    forest.shape.branching.push_back(a.dim(0) / items);
    forest.level_features.push_back(a);
  }

  const std::size_t depth = forest.shape.depth();
  forest.trees.resize(items);
  for (std::size_t t = 0; t < items; ++t) {
    FeatureTree& tree = forest.trees[t];
    tree.levels.resize(depth + 1);
    for (std::size_t r = 0; r <= depth; ++r) {
      const std::size_t width = forest.shape.width(r);
      for (std::size_t i = 0; i < width; ++i) {
        TreeNode node;
        node.row = t * width + i;
        node.task_index = r;
        node.source_item = t;
        if (r > 0) node.pseudo_label = pseudo_labels[r - 1][node.row];
        // Complete bipartite connection to the next level of the same tree.
        if (r < depth)
          for (std::size_t c = 0; c < forest.shape.width(r + 1); ++c) node.children.push_back(c);
        tree.levels[r].push_back(std::move(node));
      }
    }
  }
  return forest;
}

}  // namespace hts
