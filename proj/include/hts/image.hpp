#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hts/error.hpp"
#include "hts/tensor.hpp"

namespace hts {

// Channels-last real-valued image, pixel (y, x, c) at ((y * width) + x) * channels + c.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c)
      : height(h), width(w), channels(c), pixels(h * w * c, 0.0) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }

  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }

  bool operator==(const Image&) const = default;
};

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  static ImageShape of(const Image& img) { return {img.height, img.width, img.channels}; }
  std::size_t numel() const { return height * width * channels; }
  std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
  bool operator==(const ImageShape&) const = default;
};

// Stacks same-shape images into an (N, H, W, C) constant tensor.
template <typename Range, typename Proj>
Tensor stack_images(const Range& items, Proj proj) {
  std::vector<double> values;
  std::size_t n = 0;
  ImageShape shape{};
  for (const auto& item : items) {
    const Image& img = proj(item);
    if (n == 0) {
      shape = ImageShape::of(img);
    } else if (!(ImageShape::of(img) == shape)) {
      throw ShapeError("stack_images: image " + std::to_string(n) + " has shape " +
                       ImageShape::of(img).str() + ", expected " + shape.str());
    }
    values.insert(values.end(), img.pixels.begin(), img.pixels.end());
    ++n;
  }
  if (n == 0) throw ShapeError("stack_images: empty batch");
  return Tensor::constant({n, shape.height, shape.width, shape.channels}, std::move(values));
}

inline Tensor stack_images(const std::vector<Image>& images) {
  return stack_images(images, [](const Image& img) -> const Image& { return img; });
}

}  // namespace hts
