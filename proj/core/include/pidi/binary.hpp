#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pidi/pdc.hpp"
#include "pidi/tensor.hpp"

namespace pidi::bnn {

/// +1 when x − tau ≥ 0, −1 otherwise.
template <typename T>
constexpr T sign_value(T x, T tau = T{0}) noexcept {
  return (x - tau >= T{0}) ? T{1} : T{-1};
}

template <typename T>
BasicTensor<T> sign(const BasicTensor<T>& x, T tau = T{0});

/// Straight-through estimator: passes grad_out where |pre_activation| ≤ clip.
template <typename T>
BasicTensor<T> ste_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& pre_activation, T clip = T{1});

/// {−1,+1} tensor packed along channels: for every (n, h, w) the C signs occupy
/// ceil(C/64) little-endian words, bit c%64 of word c/64, 1 meaning +1. Bits past
/// C are always zero.
class BitTensor {
 public:
  BitTensor() = default;
  /// All elements −1.
  explicit BitTensor(Shape shape);
  BitTensor(Shape shape, std::vector<std::uint64_t> words);

  /// Bit set where x − tau ≥ 0.
  template <typename T>
  static BitTensor pack(const BasicTensor<T>& x, T tau = T{0});

  /// ±1 float tensor.
  Tensor unpack() const;

  const Shape& shape() const noexcept { return shape_; }
  int words_per_row() const noexcept { return words_per_row_; }
  std::span<const std::uint64_t> words() const noexcept { return words_; }

  const std::uint64_t* row(int n, int h, int w) const noexcept { return words_.data() + row_offset(n, h, w); }
  bool bit(int n, int c, int h, int w) const noexcept {
    return (row(n, h, w)[c >> 6] >> (c & 63)) & 1u;
  }
  void set(int n, int c, int h, int w, bool value) noexcept;

  /// Mask of valid bits in the last word of a row.
  std::uint64_t tail_mask() const noexcept;

  friend bool operator==(const BitTensor&, const BitTensor&) = default;

 private:
  std::size_t row_offset(int n, int h, int w) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.h + h) * shape_.w + w) * words_per_row_;
  }

  Shape shape_{};
  int words_per_row_ = 0;
  std::vector<std::uint64_t> words_;
};

enum class ScaleMode { none, per_channel_mean_abs };

struct BinaryConvSpec {
  ConvSpec conv;
  float tau = 0.0f;
  float ste_clip = 1.0f;
  ScaleMode scale = ScaleMode::none;

  void validate() const;
};

/// XNOR-popcount convolution. xb holds Sign(x − τ); every out-of-image tap
/// contributes Sign(0 − τ) per channel. Only groups = 1 is supported.
/// Output values are exact integers stored as float.
Tensor bconv(const BitTensor& xb, const BitTensor& wb, const BinaryConvSpec& spec);

/// Float ±1 path of bconv: binarize x against τ, pad with Sign(−τ), binarize
/// the latent weights, convolve. Used for training.
template <typename T>
BasicTensor<T> bconv_float(const BasicTensor<T>& x, const BasicTensor<T>& latent_weight, const BinaryConvSpec& spec);

/// Binary PDC on packed bits: bits are Sign(x_s − x_r) per channel and pair,
/// wb is [O, I·m, 1, 1] with bit index c·m + i.
Tensor bipdc(const Tensor& x, const BitTensor& wb, const pdc::ProbePattern& pattern, const BinaryConvSpec& spec);

/// Float ±1 path of bipdc with latent weights [O, I, m, 1].
template <typename T>
BasicTensor<T> bipdc_float(const BasicTensor<T>& x, const BasicTensor<T>& latent_weight,
                           const pdc::ProbePattern& pattern, const BinaryConvSpec& spec);

/// Channel split for the hybrid layer: floor(ξ·C + 0.5). Throws when ξ ∉ [0,1].
int split_index(double xi, int channels);

}  // namespace pidi::bnn
