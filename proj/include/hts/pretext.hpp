#pragma once

// Pretext-task operators (rotation, channel permutation) and episode
// augmentation with pseudo-labels.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "hts/data.hpp"
#include "hts/error.hpp"
#include "hts/image.hpp"

namespace hts {

enum class PretextFamily { rotation, color_permutation };

// One atomic transform: a counterclockwise rotation by quarter_turns * 90
// degrees, or a channel permutation where output channel k takes input
// channel channel_order[k].
struct Transform {
  PretextFamily family = PretextFamily::rotation;
  int quarter_turns = 0;
  std::array<std::size_t, 3> channel_order{0, 1, 2};
  std::string name;

  Image apply(const Image& in) const {
    if (family == PretextFamily::rotation) {
      if (in.height != in.width)
        throw ShapeError("rotation needs a square image, got " + ImageShape::of(in).str());
      Image out = in;
      for (int t = 0; t < quarter_turns; ++t) out = rotate90(out);
      return out;
    }
    if (in.channels != 3)
      throw ShapeError("channel permutation needs 3 channels, got " + std::to_string(in.channels));
    Image out(in.height, in.width, 3);
    const std::size_t pixels = in.height * in.width;
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t k = 0; k < 3; ++k) out.pixels[p * 3 + k] = in.pixels[p * 3 + channel_order[k]];
    return out;
  }

  // Counterclockwise quarter turn: input (i, j) lands at (W-1-j, i).
  static Image rotate90(const Image& in) {
    Image out(in.width, in.height, in.channels);
    for (std::size_t i = 0; i < in.height; ++i)
      for (std::size_t j = 0; j < in.width; ++j)
        for (std::size_t c = 0; c < in.channels; ++c)
          out.at(in.width - 1 - j, i, c) = in.at(i, j, c);
    return out;
  }
};

struct PretextOperator {
  PretextFamily family = PretextFamily::rotation;
  std::string variant_name;
  std::vector<Transform> transforms;

  std::size_t size() const { return transforms.size(); }  // M, the pseudo-label count
};

inline const std::vector<std::string>& pretext_variant_names() {
  static const std::vector<std::string> names{"rotation1",   "rotation2",   "rotation3",
                                              "rotation4",   "color_perm1", "color_perm2",
                                              "color_perm3", "color_perm6"};
  return names;
}

namespace detail {

inline Transform rotation(int degrees) {
  Transform t;
  t.family = PretextFamily::rotation;
  t.quarter_turns = degrees / 90;
  t.name = std::to_string(degrees);
  return t;
}

// `order` spells the source channel of each output channel, e.g. "GBR".
inline Transform permutation(const std::string& order) {
  Transform t;
  t.family = PretextFamily::color_permutation;
  t.name = order;
  for (std::size_t k = 0; k < 3; ++k) {
    switch (order[k]) {
      case 'R': t.channel_order[k] = 0; break;
      case 'G': t.channel_order[k] = 1; break;
      default: t.channel_order[k] = 2; break;
    }
  }
  return t;
}

}  // namespace detail

inline PretextOperator make_operator(const std::string& variant_name) {
  PretextOperator op;
  op.variant_name = variant_name;
  auto rotations = [&op](std::initializer_list<int> degrees) {
    op.family = PretextFamily::rotation;
    for (int d : degrees) op.transforms.push_back(detail::rotation(d));
  };
  auto perms = [&op](std::initializer_list<const char*> orders) {
    op.family = PretextFamily::color_permutation;
    for (const char* o : orders) op.transforms.push_back(detail::permutation(o));
  };
  if (variant_name == "rotation1") rotations({90});
  else if (variant_name == "rotation2") rotations({90, 180});
  else if (variant_name == "rotation3") rotations({90, 180, 270});
  else if (variant_name == "rotation4") rotations({0, 90, 180, 270});
  else if (variant_name == "color_perm1") perms({"GBR"});
  else if (variant_name == "color_perm2") perms({"GBR", "BRG"});
  else if (variant_name == "color_perm3") perms({"RGB", "GBR", "BRG"});
  else if (variant_name == "color_perm6") perms({"RGB", "RBG", "GRB", "GBR", "BRG", "BGR"});
  else {
    std::string valid;
    for (const auto& n : pretext_variant_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown pretext task '" + variant_name + "' (valid: " + valid + ")");
  }
  return op;
}

inline std::vector<PretextOperator> make_operators(const std::vector<std::string>& names) {
  std::vector<PretextOperator> ops;
  for (const auto& n : names) ops.push_back(make_operator(n));
  return ops;
}

struct PseudoLabeled {
  Image image;
  std::size_t pseudo_label = 0;
};

inline std::vector<PseudoLabeled> apply_operator(const PretextOperator& op, const Image& image) {
  if (op.family == PretextFamily::rotation && image.height != image.width)
    throw ShapeError("operator " + op.variant_name + " needs a square image, got " +
                     ImageShape::of(image).str());
  std::vector<PseudoLabeled> out;
  out.reserve(op.size());
  for (std::size_t m = 0; m < op.size(); ++m) out.push_back({op.transforms[m].apply(image), m});
  return out;
}

struct AugmentedItem {
  Image image;
  int class_id = 0;
  std::size_t pseudo_label = 0;
  std::size_t task_index = 0;  // 1-based position of the operator in the active list
  std::size_t source = 0;      // raw item position: support first, then query
};

struct AugmentedTask {
  std::vector<AugmentedItem> support;
  std::vector<AugmentedItem> query;
};

// Augmentations of raw item i occupy a contiguous block in pseudo-label order.
struct AugmentedEpisodeSet {
  Episode raw;
  std::vector<AugmentedTask> per_task;
};

inline AugmentedEpisodeSet augment_episode(const Episode& episode,
                                           const std::vector<PretextOperator>& ops) {
  AugmentedEpisodeSet out;
  out.raw = episode;
  for (std::size_t j = 0; j < ops.size(); ++j) {
    AugmentedTask task;
    std::size_t source = 0;
    for (const auto& item : episode.support) {
      for (auto& pl : apply_operator(ops[j], item.image))
        task.support.push_back({std::move(pl.image), item.class_id, pl.pseudo_label, j + 1, source});
      ++source;
    }
    for (const auto& item : episode.query) {
      for (auto& pl : apply_operator(ops[j], item.image))
        task.query.push_back({std::move(pl.image), item.class_id, pl.pseudo_label, j + 1, source});
      ++source;
    }
    out.per_task.push_back(std::move(task));
  }
  return out;
}

}  // namespace hts
