#pragma once

#include <string>
#include <vector>

#include "pidi/ops.hpp"
#include "pidi/tensor.hpp"

namespace pidi::pdc {

enum class Kind { cpdc, apdc, rpdc };

/// Offset relative to the window centre, rows first.
struct Offset {
  int dy = 0;
  int dx = 0;
  friend constexpr bool operator==(const Offset&, const Offset&) = default;
};

/// One probed pixel pair; the operator sees x[sampled] − x[reference].
struct PixelPair {
  Offset sampled;
  Offset reference;
  friend constexpr bool operator==(const PixelPair&, const PixelPair&) = default;
};

struct ProbePattern {
  Kind kind = Kind::cpdc;
  int window = 3;
  std::vector<PixelPair> pairs;

  int size() const noexcept { return static_cast<int>(pairs.size()); }
  int radius() const noexcept { return window / 2; }
};

/// CPDC: ring neighbour vs centre. APDC: consecutive ring cells, counter-clockwise
/// starting at (−1,−1). RPDC: radius-2 cell vs radius-1 cell along the 8 directions.
ProbePattern probe_pattern(Kind kind);

char kind_letter(Kind kind);
std::string kind_name(Kind kind);

/// Padding that preserves spatial size at stride 1 (1 for 3×3, 2 for RPDC).
int same_padding(Kind kind);

/// Per-pair weights w [O, I/g, m, 1] → equivalent vanilla kernel [O, I/g, k', k'].
template <typename T>
BasicTensor<T> reparameterize(const BasicTensor<T>& weights, const ProbePattern& pattern);

/// Adjoint of reparameterize: gradient on the kernel → gradient on the pair weights.
template <typename T>
BasicTensor<T> reparameterize_backward(const BasicTensor<T>& grad_kernel, const ProbePattern& pattern);

/// Explicit pair differences D[n, c·m + i, y, x] = x[sampled_i] − x[reference_i] at each
/// output location, zero outside the image. spec.kernel must equal pattern.window.
template <typename T>
BasicTensor<T> pair_differences(const BasicTensor<T>& input, const ProbePattern& pattern, const ConvSpec& spec);

template <typename T>
BasicTensor<T> pair_differences_backward(const BasicTensor<T>& grad_diff, const Shape& input_shape,
                                         const ProbePattern& pattern, const ConvSpec& spec);

/// y = Σ_i w_i (x_i − x_i') evaluated pair by pair. Float inputs accumulate in
/// double and round once.
template <typename T>
BasicTensor<T> pdc_forward_pairs(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                 const ProbePattern& pattern, const ConvSpec& spec);

template <typename T>
ConvGrads<T> pdc_backward_pairs(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                const BasicTensor<T>& weights, const ProbePattern& pattern, const ConvSpec& spec);

/// Vanilla convolution with a re-parameterized kernel. Float inputs accumulate
/// in double and round once.
template <typename T>
BasicTensor<T> pdc_forward_reparam(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const ConvSpec& spec);

}  // namespace pidi::pdc
