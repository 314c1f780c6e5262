#include "pidi/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace pidi::io {
namespace {

class PnmReader {
 public:
  explicit PnmReader(const std::string& bytes) : s_(bytes) {}

  int integer() {
    skip_space();
    if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      throw FormatError("PNM: expected an integer at byte " + std::to_string(pos_));
    }
    long v = 0;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      v = v * 10 + (s_[pos_++] - '0');
      if (v > 1'000'000) throw FormatError("PNM: value too large");
    }
    return static_cast<int>(v);
  }
  // Exactly one whitespace byte separates the header from binary data.
  void end_header() {
    if (pos_ >= s_.size() || !std::isspace(static_cast<unsigned char>(s_[pos_]))) {
      throw FormatError("PNM: missing whitespace after header");
    }
    ++pos_;
  }
  std::size_t remaining() const { return s_.size() - pos_; }
  unsigned char byte() { return static_cast<unsigned char>(s_[pos_++]); }

 private:
  void skip_space() {
    while (pos_ < s_.size()) {
      if (s_[pos_] == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& s_;
  std::size_t pos_ = 2;
};

std::uint8_t to_8bit(int v, int maxval) {
  if (v > maxval) throw FormatError("PNM: sample exceeds maxval");
  return static_cast<std::uint8_t>(std::lround(255.0 * v / maxval));
}

}  // namespace

Image parse_pnm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw FormatError("PNM: bad magic");
  const char kind = bytes[1];
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    throw FormatError(std::string("PNM: unsupported format P") + kind);
  }
  PnmReader r(bytes);
  Image img;
  img.width = r.integer();
  img.height = r.integer();
  const int maxval = r.integer();
  if (img.width < 1 || img.height < 1) throw FormatError("PNM: empty image");
  if (maxval < 1 || maxval > 65535) throw FormatError("PNM: maxval out of range");
  img.channels = (kind == '3' || kind == '6') ? 3 : 1;
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.samples.resize(count);
  if (kind == '2' || kind == '3') {
    for (std::size_t i = 0; i < count; ++i) img.samples[i] = to_8bit(r.integer(), maxval);
    return img;
  }
  r.end_header();
  const std::size_t width = maxval > 255 ? 2 : 1;
  if (r.remaining() < count * width) throw FormatError("PNM: truncated pixel data");
  for (std::size_t i = 0; i < count; ++i) {
    int v = r.byte();
    if (width == 2) v = (v << 8) | r.byte();
    img.samples[i] = to_8bit(v, maxval);
  }
  return img;
}

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_pnm(bytes);
}

void write_pnm(const std::string& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_pnm: channels must be 1 or 3");
  if (image.samples.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw std::invalid_argument("write_pnm: sample count does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image " + path);
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.samples.data()), static_cast<std::streamsize>(image.samples.size()));
  if (!out) throw std::runtime_error("failed writing image " + path);
}

Tensor image_to_tensor(const Image& image) {
  Tensor t({1, 3, image.height, image.width});
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  for (int c = 0; c < 3; ++c) {
    float* dst = t.plane(0, c);
    const int src_c = image.channels == 3 ? c : 0;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = image.samples[i * image.channels + src_c] / 255.0f;
  }
  return t;
}

Image map_to_image(const Tensor& map) {
  Image img{map.w(), map.h(), 1, {}};
  const float* src = map.plane(0, 0);
  img.samples.resize(map.shape().plane());
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    img.samples[i] = static_cast<std::uint8_t>(std::lround(std::clamp(src[i], 0.0f, 1.0f) * 255.0f));
  }
  return img;
}

Image tensor_to_image(const Tensor& rgb) {
  if (rgb.c() != 3) throw ShapeError("tensor_to_image: expected 3 channels");
  Image img{rgb.w(), rgb.h(), 3, {}};
  const std::size_t plane = rgb.shape().plane();
  img.samples.resize(plane * 3);
  for (int c = 0; c < 3; ++c) {
    const float* src = rgb.plane(0, c);
    for (std::size_t i = 0; i < plane; ++i) {
      img.samples[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(src[i], 0.0f, 1.0f) * 255.0f));
    }
  }
  return img;
}

}  // namespace pidi::io
