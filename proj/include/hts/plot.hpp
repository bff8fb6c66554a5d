#pragma once

// Static plots written after runs: the training-loss curve and forget-gate
// heatmaps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "hts/error.hpp"
#include "hts/io.hpp"

namespace hts::plot {

// Loss against iteration on a log10 axis (losses on easy data can span many
// decades).
inline cv::Mat loss_curve(const std::vector<double>& losses, int width = 720, int height = 400) {
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int left = 70, right = 20, top = 30, bottom = 45;
  const cv::Scalar axis(60, 60, 60), line(180, 90, 30);
  cv::rectangle(img, {left, top}, {width - right, height - bottom}, axis, 1);
  cv::putText(img, "training loss (log10)", {left, top - 10}, cv::FONT_HERSHEY_SIMPLEX, 0.5, axis, 1,
              cv::LINE_AA);
  cv::putText(img, "iteration", {width / 2 - 30, height - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.45, axis, 1,
              cv::LINE_AA);
  std::vector<double> y;
  for (double l : losses) y.push_back(std::log10(std::max(l, 1e-300)));
  if (y.empty()) return img;
  double lo = *std::min_element(y.begin(), y.end()), hi = *std::max_element(y.begin(), y.end());
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pw = width - left - right, ph = height - top - bottom;
  auto to_px = [&](std::size_t i, double v) {
    const double fx = y.size() > 1 ? static_cast<double>(i) / static_cast<double>(y.size() - 1) : 0.5;
    return cv::Point(left + static_cast<int>(std::lround(fx * pw)),
                     top + static_cast<int>(std::lround((hi - v) / (hi - lo) * ph)));
  };
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    cv::putText(img, buf, {6, to_px(0, v).y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);
  }
  const std::string last = std::to_string(losses.size());
  cv::putText(img, last, {width - right - 8 * static_cast<int>(last.size()), height - bottom + 16},
              cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);
  for (std::size_t i = 1; i < y.size(); ++i) cv::line(img, to_px(i - 1, y[i - 1]), to_px(i, y[i]), line, 1, cv::LINE_AA);
  if (y.size() == 1) cv::circle(img, to_px(0, y[0]), 2, line, cv::FILLED);
  return img;
}

// 16-bit grayscale heatmap: each value in [0, 1] fills a cell x cell block
// with round(value * 65535), so the image can be read back exactly to that
// precision.
inline cv::Mat heatmap16(const std::vector<std::vector<double>>& values, int cell = 16) {
  if (values.empty() || values.front().empty()) throw ShapeError("heatmap needs a non-empty matrix");
  const int rows = static_cast<int>(values.size()), cols = static_cast<int>(values.front().size());
  cv::Mat img(rows * cell, cols * cell, CV_16UC1);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(values[r].size()) != cols) throw ShapeError("heatmap rows differ in length");
    for (int c = 0; c < cols; ++c) {
      const double v = std::clamp(values[r][c], 0.0, 1.0);
      const auto level = static_cast<std::uint16_t>(std::lround(v * 65535.0));
      img(cv::Rect(c * cell, r * cell, cell, cell)).setTo(cv::Scalar(level));
    }
  }
  return img;
}

inline double heatmap_value(const cv::Mat& img, int row, int col, int cell = 16) {
  return img.at<std::uint16_t>(row * cell + cell / 2, col * cell + cell / 2) / 65535.0;
}

}  // namespace hts::plot
