#include "qtseg/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>

#include "qtseg/errors.hpp"

namespace qtseg::io {

Tensor read_image(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);  // grayscale -> 3 channels
  if (bgr.empty()) {
    throw IoError("cannot read image: " + path);
  }
  const int64_t h = bgr.rows;
  const int64_t w = bgr.cols;
  Tensor out = Tensor::zeros({3, h, w});
  float* dst = out.data();
  const float inv = 1.0f / 255.0f;
  for (int64_t y = 0; y < h; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (int64_t x = 0; x < w; ++x) {
      const cv::Vec3b px = row[x];
      dst[0 * h * w + y * w + x] = static_cast<float>(px[2]) * inv;  // R
      dst[1 * h * w + y * w + x] = static_cast<float>(px[1]) * inv;  // G
      dst[2 * h * w + y * w + x] = static_cast<float>(px[0]) * inv;  // B
    }
  }
  return out;
}

Tensor read_mask(const std::string& path, int64_t num_classes) {
  if (num_classes < 1) throw ConfigError("read_mask needs num_classes >= 1");
  cv::Mat gray = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (gray.empty()) {
    throw IoError("cannot read mask: " + path);
  }
  const int64_t h = gray.rows;
  const int64_t w = gray.cols;
  Tensor out = Tensor::zeros({h, w});
  float* dst = out.data();
  const double scale = static_cast<double>(num_classes) / 255.0;
  for (int64_t y = 0; y < h; ++y) {
    const uint8_t* row = gray.ptr<uint8_t>(static_cast<int>(y));
    for (int64_t x = 0; x < w; ++x) {
      dst[y * w + x] = static_cast<float>(std::lround(row[x] * scale));
    }
  }
  return out;
}

void write_mask_png(const std::string& path, const Tensor& mask,
                    int64_t num_classes) {
  if (mask.rank() != 2) {
    throw ShapeError("write_mask_png expects an [H,W] label map, got " +
                     shape_str(mask.shape()));
  }
  if (num_classes < 1) throw ConfigError("write_mask_png needs num_classes >= 1");
  const int64_t h = mask.dim(0);
  const int64_t w = mask.dim(1);
  cv::Mat gray(static_cast<int>(h), static_cast<int>(w), CV_8UC1);
  const double scale = 255.0 / static_cast<double>(num_classes);
  for (int64_t y = 0; y < h; ++y) {
    uint8_t* row = gray.ptr<uint8_t>(static_cast<int>(y));
    for (int64_t x = 0; x < w; ++x) {
      const float v = mask.values()[y * w + x];
      const auto label = static_cast<int64_t>(std::lround(v));
      if (label < 0 || label > num_classes) {
        throw ShapeError("mask label " + std::to_string(v) + " outside [0, " +
                         std::to_string(num_classes) + "]");
      }
      row[x] = static_cast<uint8_t>(std::lround(static_cast<double>(label) * scale));
    }
  }
  if (!cv::imwrite(path, gray)) {
    throw IoError("cannot write mask: " + path);
  }
}

void write_rgb_png(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_rgb_png expects [3,H,W], got " +
                     shape_str(image.shape()));
  }
  const int64_t h = image.dim(1);
  const int64_t w = image.dim(2);
  cv::Mat bgr(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
  const float* src = image.data();
  auto to_byte = [](float v) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<uint8_t>(std::lround(c * 255.0f));
  };
  for (int64_t y = 0; y < h; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (int64_t x = 0; x < w; ++x) {
      row[x][2] = to_byte(src[0 * h * w + y * w + x]);
      row[x][1] = to_byte(src[1 * h * w + y * w + x]);
      row[x][0] = to_byte(src[2 * h * w + y * w + x]);
    }
  }
  if (!cv::imwrite(path, bgr)) {
    throw IoError("cannot write image: " + path);
  }
}

}  // namespace qtseg::io
