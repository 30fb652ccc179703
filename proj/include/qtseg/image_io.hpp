#pragma once

// Image file ingress/egress. Decoding goes through OpenCV's imgcodecs (the
// one external dependency for pixel I/O); everything downstream works on the
// engine's own tensors.
//
// Images decode to [3, H, W] float in [0, 1] (RGB channel order; grayscale
// sources are replicated across the three channels). Masks decode to [H, W]
// class indices via the gray-level convention used by the mask writer:
// index i is stored as round(i * 255 / num_classes), so reading rounds
// v * num_classes / 255 back to the nearest index. For a single class this
// is a threshold at mid-gray.

#include <string>

#include "qtseg/tensor.hpp"

namespace qtseg::io {

// Decodes any OpenCV-readable image file. Throws IoError when the file is
// missing or fails to decode.
Tensor read_image(const std::string& path);

// Decodes a mask file (read as 8-bit grayscale) to [H, W] class indices.
Tensor read_mask(const std::string& path, int64_t num_classes);

// Writes [H, W] class indices as an 8-bit grayscale PNG, gray level
// round(index * 255 / num_classes).
void write_mask_png(const std::string& path, const Tensor& mask,
                    int64_t num_classes);

// Writes [3, H, W] floats in [0, 1] as an 8-bit RGB PNG (values clamped).
void write_rgb_png(const std::string& path, const Tensor& image);

}  // namespace qtseg::io
