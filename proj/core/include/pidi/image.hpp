#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pidi/tensor.hpp"

namespace pidi::io {

/// 8-bit image with interleaved samples.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 or 3
  std::vector<std::uint8_t> samples;
};

/// Reads P2, P3, P5 and P6 files with maxval ≤ 255 (other maxvals are rescaled
/// up to 65535). Malformed input raises FormatError.
Image read_pnm(const std::string& path);
Image parse_pnm(const std::string& bytes);
/// Writes P5 for one channel, P6 for three.
void write_pnm(const std::string& path, const Image& image);

/// [1, 3, H, W] in [0, 1]; grayscale is replicated across channels.
Tensor image_to_tensor(const Image& image);
/// Rounds plane (0, 0) of a map in [0, 1] to a grayscale image.
Image map_to_image(const Tensor& map);
/// Inverse of image_to_tensor for a [1, 3, H, W] tensor.
Image tensor_to_image(const Tensor& rgb);

}  // namespace pidi::io
