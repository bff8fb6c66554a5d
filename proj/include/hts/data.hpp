#pragma once

// Dataset ingestion, synthetic fixtures and n-way k-shot episode sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hts/error.hpp"
#include "hts/image.hpp"
#include "hts/io.hpp"
#include "hts/rng.hpp"

namespace hts {

struct LabeledImage {
  Image image;
  int class_id = 0;
};

// Immutable after construction. Class ids are dense, assigned in order of
// first appearance.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::string name, std::size_t resolution, std::vector<LabeledImage> items,
          std::vector<std::string> class_names = {})
      : name_(std::move(name)), resolution_(resolution), items_(std::move(items)),
        class_names_(std::move(class_names)) {
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (i > 0 && !items_[i].image.same_shape(items_[0].image))
        throw DataError("dataset '" + name_ + "': item " + std::to_string(i) +
                        " has a different image shape");
      class_index_[items_[i].class_id].push_back(i);
    }
    for (const auto& [id, idx] : class_index_) class_ids_.push_back(id);
    if (!class_names_.empty() && class_names_.size() != class_ids_.size())
      throw DataError("dataset '" + name_ + "': class name count does not match classes");
  }

  const std::string& name() const { return name_; }
  std::size_t resolution() const { return resolution_; }
  std::size_t size() const { return items_.size(); }
  std::size_t num_classes() const { return class_ids_.size(); }
  const std::vector<LabeledImage>& items() const { return items_; }
  const LabeledImage& item(std::size_t i) const { return items_.at(i); }
  const std::vector<int>& class_ids() const { return class_ids_; }
  const std::vector<std::size_t>& class_items(int class_id) const {
    auto it = class_index_.find(class_id);
    if (it == class_index_.end()) throw DataError("unknown class id " + std::to_string(class_id));
    return it->second;
  }
  // Manifest label for dense ids, the decimal id otherwise.
  std::string class_name(int class_id) const {
    if (class_id >= 0 && static_cast<std::size_t>(class_id) < class_names_.size())
      return class_names_[static_cast<std::size_t>(class_id)];
    return std::to_string(class_id);
  }
  ImageShape image_shape() const {
    return items_.empty() ? ImageShape{} : ImageShape::of(items_.front().image);
  }

 private:
  std::string name_;
  std::size_t resolution_ = 0;
  std::vector<LabeledImage> items_;
  std::vector<std::string> class_names_;
  std::map<int, std::vector<std::size_t>> class_index_;
  std::vector<int> class_ids_;
};

struct EpisodeSpec {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t q_query = 15;
  std::uint64_t seed = 0;

  std::size_t support_size() const { return n_way * k_shot; }
  std::size_t query_size() const { return n_way * q_query; }
};

struct EpisodeItem {
  Image image;
  int class_id = 0;
  std::size_t item_id = 0;  // index into the source dataset
};

// Support then query, each grouped by class in `classes` order.
struct Episode {
  std::vector<EpisodeItem> support;
  std::vector<EpisodeItem> query;
  std::vector<int> classes;

  // Episode-local label (position of class_id within `classes`).
  std::size_t local_label(int class_id) const {
    auto it = std::find(classes.begin(), classes.end(), class_id);
    if (it == classes.end()) throw DataError("class " + std::to_string(class_id) + " not in episode");
    return static_cast<std::size_t>(it - classes.begin());
  }
  std::vector<std::size_t> support_labels() const {
    std::vector<std::size_t> out;
    for (const auto& s : support) out.push_back(local_label(s.class_id));
    return out;
  }
  std::vector<std::size_t> query_labels() const {
    std::vector<std::size_t> out;
    for (const auto& q : query) out.push_back(local_label(q.class_id));
    return out;
  }
  std::size_t size() const { return support.size() + query.size(); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Loads a `filename,label` CSV manifest. Relative filenames resolve against
// `root` (the manifest's directory when empty).
inline Dataset load_split(const std::filesystem::path& manifest_path, std::size_t resolution,
                          const std::filesystem::path& root = {}) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  const std::filesystem::path base = root.empty() ? manifest_path.parent_path() : root;

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty manifest " + manifest_path.string());
  const auto header = detail::split_csv_line(line);
  if (header.size() != 2 || detail::trim(header[0]) != "filename" ||
      detail::trim(header[1]) != "label")
    throw DataError("manifest " + manifest_path.string() +
                    ": expected header 'filename,label', got '" + line + "'");

  std::map<std::string, int> label_ids;
  std::vector<std::string> class_names;
  std::vector<LabeledImage> items;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 2)
      throw DataError("manifest " + manifest_path.string() + " line " + std::to_string(line_no) +
                      ": expected 2 fields");
    const std::string file = detail::trim(fields[0]);
    const std::string label = detail::trim(fields[1]);
    auto [it, inserted] = label_ids.emplace(label, static_cast<int>(class_names.size()));
    if (inserted) class_names.push_back(label);
    std::filesystem::path p(file);
    if (p.is_relative()) p = base / p;
    items.push_back({io::read_image(p, resolution), it->second});
  }
  if (items.empty()) throw DataError("manifest " + manifest_path.string() + " lists no images");
  return Dataset(manifest_path.stem().string(), resolution, std::move(items),
                 std::move(class_names));
}

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  const double table[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
  for (int c = 0; c < 3; ++c) rgb[c] = table[sector][c];
}

}  // namespace detail

// Colored-blob images. A class fixes the blob hue (evenly spaced around the
// color wheel from a seed-dependent offset) and its nominal position; each
// image jitters position and radius and adds pixel noise.
inline Dataset make_synthetic_dataset(std::size_t num_classes, std::size_t per_class,
                                      std::size_t resolution, std::uint64_t seed) {
  if (num_classes < 1 || per_class < 1)
    throw DataError("synthetic dataset needs at least one class and one image per class");
  if (resolution < 8)
    throw DataError("synthetic dataset resolution " + std::to_string(resolution) +
                    " is below the minimum of 8");
  const double res = static_cast<double>(resolution);
  Rng global(derive_seed(seed, 0xC0105));
  const double hue_offset = global.uniform();

  std::vector<LabeledImage> items;
  items.reserve(num_classes * per_class);
  for (std::size_t c = 0; c < num_classes; ++c) {
    Rng class_rng(derive_seed(seed, 1000 + c));
    double color[3];
    detail::hsv_to_rgb(hue_offset + static_cast<double>(c) / static_cast<double>(num_classes),
                       0.9, 0.95, color);
    const double cx = res * class_rng.uniform(0.35, 0.65);
    const double cy = res * class_rng.uniform(0.35, 0.65);
    const double radius = res * 0.28;
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng img_rng(derive_seed(seed, (static_cast<std::uint64_t>(c) << 32) + i + 1));
      const double jx = cx + res * img_rng.uniform(-0.06, 0.06);
      const double jy = cy + res * img_rng.uniform(-0.06, 0.06);
      const double r = radius * img_rng.uniform(0.9, 1.1);
      Image img(resolution, resolution, 3);
      for (std::size_t y = 0; y < resolution; ++y)
        for (std::size_t x = 0; x < resolution; ++x) {
          const double dx = static_cast<double>(x) + 0.5 - jx;
          const double dy = static_cast<double>(y) + 0.5 - jy;
          const bool inside = dx * dx + dy * dy <= r * r;
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const double base = inside ? color[ch] : 0.12;
            img.at(y, x, ch) = std::clamp(base + 0.03 * img_rng.normal(), 0.0, 1.0);
          }
        }
      items.push_back({std::move(img), static_cast<int>(c)});
    }
  }
  return Dataset("synthetic-" + std::to_string(seed), resolution, std::move(items));
}

// I.i.d. uniform pixels with arbitrary class labels: no model can beat
// chance on it, which makes it the reference for calibration checks.
inline Dataset make_noise_dataset(std::size_t num_classes, std::size_t per_class,
                                  std::size_t resolution, std::uint64_t seed) {
  if (num_classes < 1 || per_class < 1)
    throw DataError("noise dataset needs at least one class and one image per class");
  Rng rng(derive_seed(seed, 0x4015E));
  std::vector<LabeledImage> items;
  items.reserve(num_classes * per_class);
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      Image img(resolution, resolution, 3);
      for (double& v : img.pixels) v = rng.uniform();
      items.push_back({std::move(img), static_cast<int>(c)});
    }
  return Dataset("noise-" + std::to_string(seed), resolution, std::move(items));
}

// Samples n classes, then k support + q query distinct items per class.
inline Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec, Rng& rng) {
  if (spec.n_way < 1 || spec.k_shot < 1 || spec.q_query < 1)
    throw DataError("episode spec needs n_way, k_shot and q_query >= 1");
  if (spec.n_way > dataset.num_classes())
    throw DataError("episode needs " + std::to_string(spec.n_way) + " classes but dataset '" +
                    dataset.name() + "' has " + std::to_string(dataset.num_classes()));
  std::vector<int> pool = dataset.class_ids();
  // Partial Fisher-Yates: the first n_way entries become the episode classes.
  for (std::size_t i = 0; i < spec.n_way; ++i)
    std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);

  Episode ep;
  ep.classes.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.n_way));
  const std::size_t need = spec.k_shot + spec.q_query;
  std::vector<std::vector<std::size_t>> chosen;
  for (int cls : ep.classes) {
    std::vector<std::size_t> members = dataset.class_items(cls);
    if (members.size() < need)
      throw DataError("class '" + dataset.class_name(cls) + "' has " +
                      std::to_string(members.size()) + " items, episode needs " +
                      std::to_string(need));
    for (std::size_t i = 0; i < need; ++i)
      std::swap(members[i], members[i + rng.below(members.size() - i)]);
    members.resize(need);
    chosen.push_back(std::move(members));
  }
  for (std::size_t c = 0; c < ep.classes.size(); ++c)
    for (std::size_t i = 0; i < spec.k_shot; ++i) {
      const std::size_t id = chosen[c][i];
      ep.support.push_back({dataset.item(id).image, ep.classes[c], id});
    }
  for (std::size_t c = 0; c < ep.classes.size(); ++c)
    for (std::size_t i = spec.k_shot; i < need; ++i) {
      const std::size_t id = chosen[c][i];
      ep.query.push_back({dataset.item(id).image, ep.classes[c], id});
    }
  return ep;
}

}  // namespace hts
