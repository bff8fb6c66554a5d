#pragma once

// File-system helpers: image decoding via OpenCV and atomic writes.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hts/error.hpp"
#include "hts/image.hpp"

namespace hts::io {

namespace fs = std::filesystem;

// Decodes any OpenCV-readable image, converts to RGB, resizes bilinearly to
// resolution x resolution and scales to [0, 1].
inline Image read_image(const fs::path& path, std::size_t resolution) {
  if (!fs::exists(path)) throw DataError("image file not found: " + path.string());
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("not a decodable image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (rgb.rows != static_cast<int>(resolution) || rgb.cols != static_cast<int>(resolution)) {
    cv::Mat resized;
    cv::resize(rgb, resized, cv::Size(static_cast<int>(resolution), static_cast<int>(resolution)),
               0, 0, cv::INTER_LINEAR);
    rgb = resized;
  }
  Image img(resolution, resolution, 3);
  for (std::size_t y = 0; y < resolution; ++y) {
    const auto* row = rgb.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < resolution; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = row[x][static_cast<int>(c)] / 255.0;
  }
  return img;
}

// Writes an RGB [0,1] image as 8-bit PNG (used by fixtures and tooling).
inline void write_png(const fs::path& path, const Image& img) {
  cv::Mat mat(static_cast<int>(img.height), static_cast<int>(img.width), CV_8UC3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
        // OpenCV stores BGR.
        mat.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x))[static_cast<int>(2 - c)] =
            static_cast<unsigned char>(v * 255.0 + 0.5);
      }
  if (!cv::imwrite(path.string(), mat)) throw RuntimeFault("cannot write " + path.string());
}

inline fs::path temp_sibling(const fs::path& path) {
  fs::path tmp = path;
  // Keep the extension last so extension-sniffing writers still work.
  tmp.replace_filename("." + path.stem().string() + ".tmp" + path.extension().string());
  return tmp;
}

inline void commit(const fs::path& tmp, const fs::path& path) {
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw RuntimeFault("cannot move " + tmp.string() + " to " + path.string() + ": " +
                       ec.message());
  }
}

// Writes bytes to a temporary sibling, then renames over the target.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFault("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeFault("write failed for " + tmp.string());
  }
  commit(tmp, path);
}

inline void write_image_atomic(const fs::path& path, const cv::Mat& mat) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = temp_sibling(path);
  if (!cv::imwrite(tmp.string(), mat)) throw RuntimeFault("cannot write " + tmp.string());
  commit(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFault("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace hts::io
