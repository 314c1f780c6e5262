#pragma once

#include <cstdint>
#include <iosfwd>
#include <variant>

#include "pidi/binary.hpp"
#include "pidi/tensor.hpp"

namespace pidi::io {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, packed_binary = 2 };

inline constexpr std::uint32_t kTensorVersion = 1;

/// Any tensor that can appear in a serialized record.
using AnyTensor = std::variant<Tensor, Tensor64, bnn::BitTensor>;

/// Record layout: "PIDT", u32 version, u8 dtype, u8 rank (4), u32 dims[4], then
/// raw little-endian payload (floats, doubles, or 64-bit packed words).
void write_tensor(std::ostream& out, const AnyTensor& tensor);
AnyTensor read_any_tensor(std::istream& in);

/// Reads a float record; f64 records are narrowed, packed records are rejected.
Tensor read_tensor(std::istream& in);

// Little-endian primitives shared by the checkpoint container.
void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);
void write_string(std::ostream& out, const std::string& s);
std::string read_string(std::istream& in);

}  // namespace pidi::io
