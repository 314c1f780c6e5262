#include "pidi/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace pidi::io {
namespace {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

constexpr std::array<char, 4> kMagic{'P', 'I', 'D', 'T'};

void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out) throw FormatError("write failed");
}

void read_bytes(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("unexpected end of tensor data");
}

void write_header(std::ostream& out, DType dtype, const Shape& s) {
  write_bytes(out, kMagic.data(), kMagic.size());
  write_u32(out, kTensorVersion);
  const std::uint8_t head[2] = {static_cast<std::uint8_t>(dtype), 4};
  write_bytes(out, head, 2);
  for (int d : {s.n, s.c, s.h, s.w}) write_u32(out, static_cast<std::uint32_t>(d));
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_bytes(out, &v, sizeof v); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  read_bytes(in, &v, sizeof v);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

std::string read_string(std::istream& in) {
  const std::uint32_t n = read_u32(in);
  if (n > (1u << 24)) throw FormatError("string length " + std::to_string(n) + " is implausible");
  std::string s(n, '\0');
  read_bytes(in, s.data(), n);
  return s;
}

void write_tensor(std::ostream& out, const AnyTensor& tensor) {
  std::visit(
      [&](const auto& t) {
        using V = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<V, Tensor>) {
          write_header(out, DType::f32, t.shape());
          write_bytes(out, t.data(), t.size() * sizeof(float));
        } else if constexpr (std::is_same_v<V, Tensor64>) {
          write_header(out, DType::f64, t.shape());
          write_bytes(out, t.data(), t.size() * sizeof(double));
        } else {
          write_header(out, DType::packed_binary, t.shape());
          write_bytes(out, t.words().data(), t.words().size() * sizeof(std::uint64_t));
        }
      },
      tensor);
}

AnyTensor read_any_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  read_bytes(in, magic.data(), magic.size());
  if (magic != kMagic) throw FormatError("bad tensor magic");
  const std::uint32_t version = read_u32(in);
  if (version != kTensorVersion) {
    throw FormatError("unsupported tensor format version " + std::to_string(version) + " (this build reads " +
                      std::to_string(kTensorVersion) + ")");
  }
  std::uint8_t head[2];
  read_bytes(in, head, 2);
  if (head[1] != 4) throw FormatError("tensor rank " + std::to_string(head[1]) + " is not 4");
  std::uint32_t dims[4];
  for (auto& d : dims) {
    d = read_u32(in);
    if (d > (1u << 28)) throw FormatError("tensor extent " + std::to_string(d) + " is implausible");
  }
  const Shape shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                    static_cast<int>(dims[3])};
  switch (static_cast<DType>(head[0])) {
    case DType::f32: {
      std::vector<float> v(shape.numel());
      read_bytes(in, v.data(), v.size() * sizeof(float));
      return Tensor(shape, std::move(v));
    }
    case DType::f64: {
      std::vector<double> v(shape.numel());
      read_bytes(in, v.data(), v.size() * sizeof(double));
      return Tensor64(shape, std::move(v));
    }
    case DType::packed_binary: {
      const std::size_t words = static_cast<std::size_t>(shape.n) * shape.h * shape.w * ((shape.c + 63) / 64);
      std::vector<std::uint64_t> v(words);
      read_bytes(in, v.data(), v.size() * sizeof(std::uint64_t));
      return bnn::BitTensor(shape, std::move(v));
    }
  }
  throw FormatError("unknown tensor dtype tag " + std::to_string(head[0]));
}

Tensor read_tensor(std::istream& in) {
  AnyTensor t = read_any_tensor(in);
  if (auto* f = std::get_if<Tensor>(&t)) return std::move(*f);
  if (auto* d = std::get_if<Tensor64>(&t)) return d->cast<float>();
  throw FormatError("expected a floating-point tensor, found packed binary data");
}

}  // namespace pidi::io
