#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pidi/tensor.hpp"

namespace pidi {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Output shape of conv2d; throws ShapeError naming the offending dimension.
Shape conv2d_output_shape(const Shape& input, const Shape& weight, const ConvSpec& spec);

/// Zero-padded 2-D convolution (cross-correlation) with weight [outC, inC/groups, k, k].
/// Depthwise layers use a direct kernel, everything else im2col + gemm.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const ConvSpec& spec);

/// Direct loop nest, channel-major then row then column. Used as the oracle for conv2d.
template <typename T>
BasicTensor<T> conv2d_reference(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const ConvSpec& spec);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, const ConvSpec& spec);

/// Adds bias[c] to every element of channel c.
template <typename T>
void add_channel_bias(BasicTensor<T>& x, std::span<const T> bias);

/// Per-channel sum over batch and space; the bias gradient.
template <typename T>
std::vector<T> channel_sum(const BasicTensor<T>& grad);

// ---------------------------------------------------------------------------
// Pooling and resampling
// ---------------------------------------------------------------------------

enum class PoolMode { max, avg };

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  /// Flat input index of each output's maximum (max mode only).
  std::vector<std::uint32_t> argmax;
};

/// 2×2 window, stride 2. H and W must be even.
template <typename T>
PoolResult<T> pool2x2(const BasicTensor<T>& input, PoolMode mode);

template <typename T>
BasicTensor<T> pool2x2_backward(const BasicTensor<T>& grad_out, const Shape& input_shape,
                                PoolMode mode, std::span<const std::uint32_t> argmax);

/// General max pooling with -inf padding; used by the reference ResNet stem.
template <typename T>
PoolResult<T> max_pool(const BasicTensor<T>& input, int kernel, int stride, int padding);

template <typename T>
BasicTensor<T> max_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape,
                                 std::span<const std::uint32_t> argmax);

/// Bilinear resize, align_corners = false (half-pixel centres, edge clamped).
template <typename T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& input, int out_h, int out_w);

template <typename T>
BasicTensor<T> upsample_bilinear_backward(const BasicTensor<T>& grad_out, const Shape& input_shape);

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape);

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class ActivationKind { relu, prelu, sigmoid };

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input);

/// max(0,x) + a_c·min(0,x) with one slope per channel.
template <typename T>
BasicTensor<T> prelu(const BasicTensor<T>& x, std::span<const T> slopes);

template <typename T>
struct PReluGrads {
  BasicTensor<T> input;
  std::vector<T> slopes;
};
template <typename T>
PReluGrads<T> prelu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                             std::span<const T> slopes);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);
/// Takes the forward output, not the input.
template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output);

/// Dispatches on kind; slopes are only read for prelu.
template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, ActivationKind kind, std::span<const T> slopes = {});

// ---------------------------------------------------------------------------
// Elementwise and structural helpers
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
void add_inplace(BasicTensor<T>& acc, const BasicTensor<T>& b);

/// x[n,c,h,w] · gate[n,0,h,w].
template <typename T>
BasicTensor<T> multiply_by_map(const BasicTensor<T>& x, const BasicTensor<T>& gate);

template <typename T>
struct MapProductGrads {
  BasicTensor<T> x;
  BasicTensor<T> gate;
};
template <typename T>
MapProductGrads<T> multiply_by_map_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x,
                                            const BasicTensor<T>& gate);

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts);
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int begin, int end);
/// Writes src into channels [begin, begin + src.c()) of dst, adding to existing values.
template <typename T>
void accumulate_channels(BasicTensor<T>& dst, const BasicTensor<T>& src, int begin);

/// Constant-value border of width pad on every side.
template <typename T>
BasicTensor<T> pad_constant(const BasicTensor<T>& x, int pad, T value);
template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& x, int pad);

// ---------------------------------------------------------------------------
// Fully connected (classifier head)
// ---------------------------------------------------------------------------

/// x [N, K, 1, 1] (or any N×K flattening), weight [out, K, 1, 1], bias[out] → [N, out, 1, 1].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, std::span<const T> bias);

template <typename T>
struct LinearGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  std::vector<T> bias;
};
template <typename T>
LinearGrads<T> linear_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x,
                               const BasicTensor<T>& weight);

// ---------------------------------------------------------------------------
// Batch normalization (Bi-PiDiNet only; PiDiNet is BN-free)
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormCache {
  BasicTensor<T> normalized;
  std::vector<T> inv_std;
};

/// Normalizes with batch statistics and updates the running estimates.
template <typename T>
BasicTensor<T> batch_norm_train(const BasicTensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                                std::span<T> running_mean, std::span<T> running_var, T momentum, T eps,
                                BatchNormCache<T>& cache);

template <typename T>
BasicTensor<T> batch_norm_eval(const BasicTensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                               std::span<const T> running_mean, std::span<const T> running_var, T eps);

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};
template <typename T>
BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>& grad_out, std::span<const T> gamma,
                                      const BatchNormCache<T>& cache);

}  // namespace pidi
