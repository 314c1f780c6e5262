#include "pidi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pidi/gemm.hpp"
#include "pidi/parallel.hpp"

namespace pidi {
namespace {

bool is_depthwise(const Shape& input, const Shape& weight, const ConvSpec& spec) {
  return spec.groups == input.c && weight.n == input.c && weight.c == 1;
}

// Lowers one channel group of the whole batch to a [Kg, N·P] column matrix.
template <typename T>
void im2col_group(const BasicTensor<T>& input, const ConvSpec& spec, int group, int in_per_group,
                  int out_h, int out_w, T* cols) {
  const Shape& s = input.shape();
  const int k = spec.kernel;
  const std::size_t plane_out = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t ncols = plane_out * s.n;
  const std::size_t rows = static_cast<std::size_t>(in_per_group) * k * k;
  parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      const int kx = static_cast<int>(r % k);
      const int ky = static_cast<int>((r / k) % k);
      const int ci = static_cast<int>(r / (static_cast<std::size_t>(k) * k));
      const int c = group * in_per_group + ci;
      T* dst = cols + r * ncols;
      for (int n = 0; n < s.n; ++n) {
        const T* src = input.plane(n, c);
        T* d = dst + static_cast<std::size_t>(n) * plane_out;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
          T* drow = d + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= s.h) {
            std::fill_n(drow, out_w, T{0});
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * s.w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
            drow[ox] = (ix >= 0 && ix < s.w) ? srow[ix] : T{0};
          }
        }
      }
    }
  });
}

// Scatter-adds a [Kg, N·P] column gradient back onto the input gradient.
template <typename T>
void col2im_group(const T* cols, const ConvSpec& spec, int group, int in_per_group, int out_h,
                  int out_w, BasicTensor<T>& grad_input) {
  const Shape& s = grad_input.shape();
  const int k = spec.kernel;
  const std::size_t plane_out = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t ncols = plane_out * s.n;
  const std::size_t planes = static_cast<std::size_t>(s.n) * in_per_group;
  parallel_for(planes, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t pl = lo; pl < hi; ++pl) {
      const int n = static_cast<int>(pl / in_per_group);
      const int ci = static_cast<int>(pl % in_per_group);
      T* dst = grad_input.plane(n, group * in_per_group + ci);
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const std::size_t r = (static_cast<std::size_t>(ci) * k + ky) * k + kx;
          const T* src = cols + r * ncols + static_cast<std::size_t>(n) * plane_out;
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
            if (iy < 0 || iy >= s.h) continue;
            T* drow = dst + static_cast<std::size_t>(iy) * s.w;
            const T* srow = src + static_cast<std::size_t>(oy) * out_w;
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
              if (ix >= 0 && ix < s.w) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  });
}

// Valid output-column range [lo, hi) for which ox·stride + off lies in [0, width).
inline void valid_range(int off, int stride, int width, int out_w, int& lo, int& hi) {
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const int last = width - 1 - off;
  hi = last < 0 ? 0 : std::min(out_w, last / stride + 1);
  if (lo > hi) lo = hi;
}

template <typename T>
BasicTensor<T> depthwise_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                 const ConvSpec& spec, const Shape& out_shape) {
  BasicTensor<T> out(out_shape);
  const Shape& s = input.shape();
  const int k = spec.kernel;
  parallel_for(static_cast<std::size_t>(s.n) * s.c, [&](std::size_t lo_pl, std::size_t hi_pl) {
    for (std::size_t pl = lo_pl; pl < hi_pl; ++pl) {
      const int n = static_cast<int>(pl / s.c);
      const int c = static_cast<int>(pl % s.c);
      const T* in = input.plane(n, c);
      const T* w = weight.data() + static_cast<std::size_t>(c) * k * k;
      T* o = out.plane(n, c);
      for (int oy = 0; oy < out_shape.h; ++oy) {
        T* orow = o + static_cast<std::size_t>(oy) * out_shape.w;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
          if (iy < 0 || iy >= s.h) continue;
          const T* irow = in + static_cast<std::size_t>(iy) * s.w;
          for (int kx = 0; kx < k; ++kx) {
            const T wv = w[ky * k + kx];
            const int off = kx * spec.dilation - spec.padding;
            int lo = 0;
            int hi = 0;
            valid_range(off, spec.stride, s.w, out_shape.w, lo, hi);
            if (spec.stride == 1) {
              const T* src = irow + off;
              for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * src[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox * spec.stride + off];
            }
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
ConvGrads<T> depthwise_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                const BasicTensor<T>& weight, const ConvSpec& spec) {
  const Shape& s = input.shape();
  const Shape& os = grad_out.shape();
  const int k = spec.kernel;
  ConvGrads<T> g{BasicTensor<T>(s), BasicTensor<T>(weight.shape())};
  parallel_for(static_cast<std::size_t>(s.n) * s.c, [&](std::size_t lo_pl, std::size_t hi_pl) {
    for (std::size_t pl = lo_pl; pl < hi_pl; ++pl) {
      const int n = static_cast<int>(pl / s.c);
      const int c = static_cast<int>(pl % s.c);
      const T* go = grad_out.plane(n, c);
      const T* w = weight.data() + static_cast<std::size_t>(c) * k * k;
      T* gi = g.input.plane(n, c);
      for (int oy = 0; oy < os.h; ++oy) {
        const T* grow = go + static_cast<std::size_t>(oy) * os.w;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
          if (iy < 0 || iy >= s.h) continue;
          T* irow = gi + static_cast<std::size_t>(iy) * s.w;
          for (int kx = 0; kx < k; ++kx) {
            const T wv = w[ky * k + kx];
            const int off = kx * spec.dilation - spec.padding;
            int lo = 0;
            int hi = 0;
            valid_range(off, spec.stride, s.w, os.w, lo, hi);
            for (int ox = lo; ox < hi; ++ox) irow[ox * spec.stride + off] += wv * grow[ox];
          }
        }
      }
    }
  });
  parallel_for(static_cast<std::size_t>(s.c), [&](std::size_t lo_c, std::size_t hi_c) {
    for (std::size_t cc = lo_c; cc < hi_c; ++cc) {
      const int c = static_cast<int>(cc);
      T* gw = g.weight.data() + static_cast<std::size_t>(c) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const int off = kx * spec.dilation - spec.padding;
          int lo = 0;
          int hi = 0;
          valid_range(off, spec.stride, s.w, os.w, lo, hi);
          T acc = 0;
          for (int n = 0; n < s.n; ++n) {
            const T* in = input.plane(n, c);
            const T* go = grad_out.plane(n, c);
            for (int oy = 0; oy < os.h; ++oy) {
              const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
              if (iy < 0 || iy >= s.h) continue;
              const T* irow = in + static_cast<std::size_t>(iy) * s.w;
              const T* grow = go + static_cast<std::size_t>(oy) * os.w;
              for (int ox = lo; ox < hi; ++ox) acc += grow[ox] * irow[ox * spec.stride + off];
            }
          }
          gw[ky * k + kx] = acc;
        }
      }
    }
  });
  return g;
}

}  // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& weight, const ConvSpec& spec) {
  spec.validate();
  if (weight.h != spec.kernel || weight.w != spec.kernel) {
    throw ShapeError("conv2d: weight spatial extent " + std::to_string(weight.h) + "x" +
                     std::to_string(weight.w) + " does not match kernel_size " +
                     std::to_string(spec.kernel));
  }
  if (input.c % spec.groups != 0) {
    throw ShapeError("conv2d: input channels " + std::to_string(input.c) + " not divisible by groups " +
                     std::to_string(spec.groups));
  }
  if (weight.n % spec.groups != 0) {
    throw ShapeError("conv2d: output channels " + std::to_string(weight.n) +
                     " not divisible by groups " + std::to_string(spec.groups));
  }
  if (weight.c * spec.groups != input.c) {
    throw ShapeError("conv2d: weight input-channel dim " + std::to_string(weight.c) + " × groups " +
                     std::to_string(spec.groups) + " != input channels " + std::to_string(input.c));
  }
  const int oh = spec.output_extent(input.h);
  const int ow = spec.output_extent(input.w);
  if (oh < 1) throw ShapeError("conv2d: output height would be " + std::to_string(oh) + " for input height " + std::to_string(input.h));
  if (ow < 1) throw ShapeError("conv2d: output width would be " + std::to_string(ow) + " for input width " + std::to_string(input.w));
  return {input.n, weight.n, oh, ow};
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const ConvSpec& spec) {
  const Shape out_shape = conv2d_output_shape(input.shape(), weight.shape(), spec);
  if (is_depthwise(input.shape(), weight.shape(), spec)) {
    return depthwise_forward(input, weight, spec, out_shape);
  }
  BasicTensor<T> out(out_shape);
  const int in_pg = input.c() / spec.groups;
  const int out_pg = weight.n() / spec.groups;
  const int kg = in_pg * spec.kernel * spec.kernel;
  const std::size_t plane_out = out_shape.plane();
  const int ncols = static_cast<int>(plane_out * input.n());
  std::vector<T> cols(static_cast<std::size_t>(kg) * ncols);
  std::vector<T> prod(static_cast<std::size_t>(out_pg) * ncols);
  for (int g = 0; g < spec.groups; ++g) {
    im2col_group(input, spec, g, in_pg, out_shape.h, out_shape.w, cols.data());
    const T* wg = weight.data() + static_cast<std::size_t>(g) * out_pg * kg;
    gemm<T>(false, false, out_pg, ncols, kg, wg, kg, cols.data(), ncols, prod.data(), ncols, false);
    for (int o = 0; o < out_pg; ++o) {
      for (int n = 0; n < input.n(); ++n) {
        const T* src = prod.data() + static_cast<std::size_t>(o) * ncols + n * plane_out;
        std::copy_n(src, plane_out, out.plane(n, g * out_pg + o));
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d_reference(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const ConvSpec& spec) {
  const Shape os = conv2d_output_shape(input.shape(), weight.shape(), spec);
  BasicTensor<T> out(os);
  const int in_pg = input.c() / spec.groups;
  const int out_pg = weight.n() / spec.groups;
  const int k = spec.kernel;
  for (int n = 0; n < os.n; ++n) {
    for (int o = 0; o < os.c; ++o) {
      const int g = o / out_pg;
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox) {
          T acc = 0;
          for (int ci = 0; ci < in_pg; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
              if (iy < 0 || iy >= input.h()) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
                if (ix < 0 || ix >= input.w()) continue;
                acc += weight(o, ci, ky, kx) * input(n, g * in_pg + ci, iy, ix);
              }
            }
          }
          out(n, o, oy, ox) = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, const ConvSpec& spec) {
  const Shape os = conv2d_output_shape(input.shape(), weight.shape(), spec);
  if (grad_out.shape() != os) {
    throw ShapeError("conv2d_backward: grad_out " + grad_out.shape().str() + " != forward output " + os.str());
  }
  if (is_depthwise(input.shape(), weight.shape(), spec)) {
    return depthwise_backward(grad_out, input, weight, spec);
  }
  ConvGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weight.shape())};
  const int in_pg = input.c() / spec.groups;
  const int out_pg = weight.n() / spec.groups;
  const int kg = in_pg * spec.kernel * spec.kernel;
  const std::size_t plane_out = os.plane();
  const int ncols = static_cast<int>(plane_out * input.n());
  std::vector<T> cols(static_cast<std::size_t>(kg) * ncols);
  std::vector<T> gcols(static_cast<std::size_t>(kg) * ncols);
  std::vector<T> gmat(static_cast<std::size_t>(out_pg) * ncols);
  for (int grp = 0; grp < spec.groups; ++grp) {
    for (int o = 0; o < out_pg; ++o) {
      for (int n = 0; n < input.n(); ++n) {
        std::copy_n(grad_out.plane(n, grp * out_pg + o), plane_out,
                    gmat.data() + static_cast<std::size_t>(o) * ncols + n * plane_out);
      }
    }
    im2col_group(input, spec, grp, in_pg, os.h, os.w, cols.data());
    const T* wg = weight.data() + static_cast<std::size_t>(grp) * out_pg * kg;
    T* gw = g.weight.data() + static_cast<std::size_t>(grp) * out_pg * kg;
    gemm<T>(false, true, out_pg, kg, ncols, gmat.data(), ncols, cols.data(), ncols, gw, kg, false);
    gemm<T>(true, false, kg, ncols, out_pg, wg, kg, gmat.data(), ncols, gcols.data(), ncols, false);
    col2im_group(gcols.data(), spec, grp, in_pg, os.h, os.w, g.input);
  }
  return g;
}

template <typename T>
void add_channel_bias(BasicTensor<T>& x, std::span<const T> bias) {
  if (bias.size() != static_cast<std::size_t>(x.c())) {
    throw ShapeError("bias length " + std::to_string(bias.size()) + " != channels " + std::to_string(x.c()));
  }
  const std::size_t p = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      T* d = x.plane(n, c);
      const T b = bias[c];
      for (std::size_t i = 0; i < p; ++i) d[i] += b;
    }
  }
}

template <typename T>
std::vector<T> channel_sum(const BasicTensor<T>& grad) {
  std::vector<T> out(grad.c(), T{0});
  const std::size_t p = grad.shape().plane();
  for (int c = 0; c < grad.c(); ++c) {
    T acc = 0;
    for (int n = 0; n < grad.n(); ++n) {
      const T* d = grad.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) acc += d[i];
    }
    out[c] = acc;
  }
  return out;
}

template <typename T>
PoolResult<T> pool2x2(const BasicTensor<T>& input, PoolMode mode) {
  const Shape& s = input.shape();
  if (s.h % 2 != 0) throw ShapeError("pool2x2: height " + std::to_string(s.h) + " is odd");
  if (s.w % 2 != 0) throw ShapeError("pool2x2: width " + std::to_string(s.w) + " is odd");
  PoolResult<T> r{BasicTensor<T>({s.n, s.c, s.h / 2, s.w / 2}), {}};
  if (mode == PoolMode::max) r.argmax.resize(r.output.size());
  const int oh = s.h / 2;
  const int ow = s.w / 2;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = input.offset(n, c, 0, 0);
      const T* in = input.data() + base;
      T* out = r.output.plane(n, c);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const std::size_t i00 = static_cast<std::size_t>(2 * oy) * s.w + 2 * ox;
          const std::size_t idx[4] = {i00, i00 + 1, i00 + s.w, i00 + s.w + 1};
          const std::size_t o = static_cast<std::size_t>(oy) * ow + ox;
          if (mode == PoolMode::avg) {
            out[o] = (in[idx[0]] + in[idx[1]] + in[idx[2]] + in[idx[3]]) / T{4};
          } else {
            std::size_t best = idx[0];
            for (int q = 1; q < 4; ++q) {
              if (in[idx[q]] > in[best]) best = idx[q];
            }
            out[o] = in[best];
            r.argmax[r.output.offset(n, c, oy, ox)] = static_cast<std::uint32_t>(base + best);
          }
        }
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> pool2x2_backward(const BasicTensor<T>& grad_out, const Shape& input_shape, PoolMode mode,
                                std::span<const std::uint32_t> argmax) {
  if (grad_out.shape() != Shape{input_shape.n, input_shape.c, input_shape.h / 2, input_shape.w / 2}) {
    throw ShapeError("pool2x2_backward: grad_out " + grad_out.shape().str() + " does not match input " +
                     input_shape.str());
  }
  BasicTensor<T> g(input_shape);
  if (mode == PoolMode::max) {
    if (argmax.size() != grad_out.size()) throw ShapeError("pool2x2_backward: argmax size mismatch");
    for (std::size_t i = 0; i < grad_out.size(); ++i) g.data()[argmax[i]] += grad_out.data()[i];
    return g;
  }
  const int ow = input_shape.w / 2;
  for (int n = 0; n < input_shape.n; ++n) {
    for (int c = 0; c < input_shape.c; ++c) {
      const T* go = grad_out.plane(n, c);
      T* gi = g.plane(n, c);
      for (int oy = 0; oy < input_shape.h / 2; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const T v = go[static_cast<std::size_t>(oy) * ow + ox] / T{4};
          const std::size_t i00 = static_cast<std::size_t>(2 * oy) * input_shape.w + 2 * ox;
          gi[i00] += v;
          gi[i00 + 1] += v;
          gi[i00 + input_shape.w] += v;
          gi[i00 + input_shape.w + 1] += v;
        }
      }
    }
  }
  return g;
}

template <typename T>
PoolResult<T> max_pool(const BasicTensor<T>& input, int kernel, int stride, int padding) {
  const Shape& s = input.shape();
  const int oh = (s.h + 2 * padding - kernel) / stride + 1;
  const int ow = (s.w + 2 * padding - kernel) / stride + 1;
  if (oh < 1 || ow < 1) throw ShapeError("max_pool: empty output for input " + s.str());
  PoolResult<T> r{BasicTensor<T>({s.n, s.c, oh, ow}), {}};
  r.argmax.resize(r.output.size());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = input.offset(n, c, std::clamp(oy * stride - padding, 0, s.h - 1),
                                              std::clamp(ox * stride - padding, 0, s.w - 1));
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= s.h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= s.w) continue;
              const std::size_t idx = input.offset(n, c, iy, ix);
              if (input.data()[idx] > best) {
                best = input.data()[idx];
                best_idx = idx;
              }
            }
          }
          r.output(n, c, oy, ox) = best;
          r.argmax[r.output.offset(n, c, oy, ox)] = static_cast<std::uint32_t>(best_idx);
        }
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> max_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape,
                                 std::span<const std::uint32_t> argmax) {
  if (argmax.size() != grad_out.size()) throw ShapeError("max_pool_backward: argmax size mismatch");
  BasicTensor<T> g(input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) g.data()[argmax[i]] += grad_out.data()[i];
  return g;
}

namespace {

template <typename T>
struct AxisWeights {
  std::vector<int> i0, i1;
  std::vector<T> w0, w1;
};

template <typename T>
AxisWeights<T> bilinear_axis(int in, int out) {
  AxisWeights<T> a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.w0.resize(out);
  a.w1.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(src);
    if (lo > in - 1) lo = in - 1;
    const int hi = lo < in - 1 ? lo + 1 : lo;
    const double frac = src - lo;
    a.i0[d] = lo;
    a.i1[d] = hi;
    a.w1[d] = static_cast<T>(frac);
    a.w0[d] = static_cast<T>(1.0 - frac);
  }
  return a;
}

}  // namespace

template <typename T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("upsample_bilinear: zero-sized target");
  if (out_h < input.h() || out_w < input.w()) {
    throw ShapeError("upsample_bilinear: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " smaller than input " + input.shape().str());
  }
  const auto ay = bilinear_axis<T>(input.h(), out_h);
  const auto ax = bilinear_axis<T>(input.w(), out_w);
  BasicTensor<T> out({input.n(), input.c(), out_h, out_w});
  parallel_for(static_cast<std::size_t>(input.n()) * input.c(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t pl = lo; pl < hi; ++pl) {
      const int n = static_cast<int>(pl / input.c());
      const int c = static_cast<int>(pl % input.c());
      const T* in = input.plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < out_h; ++y) {
        const T* r0 = in + static_cast<std::size_t>(ay.i0[y]) * input.w();
        const T* r1 = in + static_cast<std::size_t>(ay.i1[y]) * input.w();
        for (int x = 0; x < out_w; ++x) {
          const T top = ax.w0[x] * r0[ax.i0[x]] + ax.w1[x] * r0[ax.i1[x]];
          const T bot = ax.w0[x] * r1[ax.i0[x]] + ax.w1[x] * r1[ax.i1[x]];
          o[static_cast<std::size_t>(y) * out_w + x] = ay.w0[y] * top + ay.w1[y] * bot;
        }
      }
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> upsample_bilinear_backward(const BasicTensor<T>& grad_out, const Shape& input_shape) {
  const int out_h = grad_out.h();
  const int out_w = grad_out.w();
  const auto ay = bilinear_axis<T>(input_shape.h, out_h);
  const auto ax = bilinear_axis<T>(input_shape.w, out_w);
  BasicTensor<T> g(input_shape);
  parallel_for(static_cast<std::size_t>(input_shape.n) * input_shape.c, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t pl = lo; pl < hi; ++pl) {
      const int n = static_cast<int>(pl / input_shape.c);
      const int c = static_cast<int>(pl % input_shape.c);
      const T* go = grad_out.plane(n, c);
      T* gi = g.plane(n, c);
      for (int y = 0; y < out_h; ++y) {
        T* r0 = gi + static_cast<std::size_t>(ay.i0[y]) * input_shape.w;
        T* r1 = gi + static_cast<std::size_t>(ay.i1[y]) * input_shape.w;
        for (int x = 0; x < out_w; ++x) {
          const T v = go[static_cast<std::size_t>(y) * out_w + x];
          const T top = ay.w0[y] * v;
          const T bot = ay.w1[y] * v;
          r0[ax.i0[x]] += ax.w0[x] * top;
          r0[ax.i1[x]] += ax.w1[x] * top;
          r1[ax.i0[x]] += ax.w0[x] * bot;
          r1[ax.i1[x]] += ax.w1[x] * bot;
        }
      }
    }
  });
  return g;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
  BasicTensor<T> out({input.n(), input.c(), 1, 1});
  const std::size_t p = input.shape().plane();
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      const T* d = input.plane(n, c);
      T acc = 0;
      for (std::size_t i = 0; i < p; ++i) acc += d[i];
      out(n, c, 0, 0) = acc / static_cast<T>(p);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape) {
  BasicTensor<T> g(input_shape);
  const std::size_t p = input_shape.plane();
  for (int n = 0; n < input_shape.n; ++n) {
    for (int c = 0; c < input_shape.c; ++c) {
      const T v = grad_out(n, c, 0, 0) / static_cast<T>(p);
      std::fill_n(g.plane(n, c), p, v);
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = x.data()[i] > T{0} ? x.data()[i] : T{0};
  return y;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input) {
  BasicTensor<T> g(input.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = input.data()[i] > T{0} ? grad_out.data()[i] : T{0};
  return g;
}

template <typename T>
BasicTensor<T> prelu(const BasicTensor<T>& x, std::span<const T> slopes) {
  if (slopes.size() != static_cast<std::size_t>(x.c())) throw ShapeError("prelu: one slope per channel required");
  BasicTensor<T> y(x.shape());
  const std::size_t p = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T a = slopes[c];
      const T* s = x.plane(n, c);
      T* d = y.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) d[i] = s[i] > T{0} ? s[i] : a * s[i];
    }
  }
  return y;
}

template <typename T>
PReluGrads<T> prelu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input, std::span<const T> slopes) {
  PReluGrads<T> g{BasicTensor<T>(input.shape()), std::vector<T>(input.c(), T{0})};
  const std::size_t p = input.shape().plane();
  for (int c = 0; c < input.c(); ++c) {
    const T a = slopes[c];
    T acc = 0;
    for (int n = 0; n < input.n(); ++n) {
      const T* x = input.plane(n, c);
      const T* go = grad_out.plane(n, c);
      T* gi = g.input.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) {
        if (x[i] > T{0}) {
          gi[i] = go[i];
        } else {
          gi[i] = a * go[i];
          acc += go[i] * x[i];
        }
      }
    }
    g.slopes[c] = acc;
  }
  return g;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    if (v >= 0) {
      y.data()[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y.data()[i] = e / (T{1} + e);
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output) {
  BasicTensor<T> g(output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T s = output.data()[i];
    g.data()[i] = grad_out.data()[i] * s * (T{1} - s);
  }
  return g;
}

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, ActivationKind kind, std::span<const T> slopes) {
  switch (kind) {
    case ActivationKind::relu:
      return relu(x);
    case ActivationKind::prelu:
      return prelu(x, slopes);
    case ActivationKind::sigmoid:
      return sigmoid(x);
  }
  return x;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  BasicTensor<T> r = a;
  add_inplace(r, b);
  return r;
}

template <typename T>
void add_inplace(BasicTensor<T>& acc, const BasicTensor<T>& b) {
  if (acc.shape() != b.shape()) throw ShapeError("add: " + acc.shape().str() + " vs " + b.shape().str());
  T* d = acc.data();
  const T* s = b.data();
  for (std::size_t i = 0; i < acc.size(); ++i) d[i] += s[i];
}

template <typename T>
BasicTensor<T> multiply_by_map(const BasicTensor<T>& x, const BasicTensor<T>& gate) {
  if (gate.c() != 1 || gate.n() != x.n() || gate.h() != x.h() || gate.w() != x.w()) {
    throw ShapeError("multiply_by_map: gate " + gate.shape().str() + " incompatible with " + x.shape().str());
  }
  BasicTensor<T> y(x.shape());
  const std::size_t p = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    const T* gp = gate.plane(n, 0);
    for (int c = 0; c < x.c(); ++c) {
      const T* s = x.plane(n, c);
      T* d = y.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) d[i] = s[i] * gp[i];
    }
  }
  return y;
}

template <typename T>
MapProductGrads<T> multiply_by_map_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x,
                                            const BasicTensor<T>& gate) {
  MapProductGrads<T> g{multiply_by_map(grad_out, gate), BasicTensor<T>(gate.shape())};
  const std::size_t p = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    T* gg = g.gate.plane(n, 0);
    for (int c = 0; c < x.c(); ++c) {
      const T* s = x.plane(n, c);
      const T* go = grad_out.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) gg[i] += go[i] * s[i];
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape s = parts.front()->shape();
  int total = 0;
  for (const auto* p : parts) {
    if (p->n() != s.n || p->h() != s.h || p->w() != s.w) {
      throw ShapeError("concat_channels: " + p->shape().str() + " incompatible with " + s.str());
    }
    total += p->c();
  }
  s.c = total;
  BasicTensor<T> out(s);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    int at = 0;
    for (const auto* p : parts) {
      std::copy_n(p->plane(n, 0), plane * p->c(), out.plane(n, at));
      at += p->c();
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int begin, int end) {
  if (begin < 0 || end > x.c() || begin > end) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     std::to_string(x.c()) + " channels");
  }
  BasicTensor<T> out({x.n(), end - begin, x.h(), x.w()});
  const std::size_t plane = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    std::copy_n(x.plane(n, begin), plane * (end - begin), out.plane(n, 0));
  }
  return out;
}

template <typename T>
void accumulate_channels(BasicTensor<T>& dst, const BasicTensor<T>& src, int begin) {
  if (src.n() != dst.n() || src.h() != dst.h() || src.w() != dst.w() || begin < 0 || begin + src.c() > dst.c()) {
    throw ShapeError("accumulate_channels: " + src.shape().str() + " into " + dst.shape().str());
  }
  const std::size_t count = dst.shape().plane() * src.c();
  for (int n = 0; n < dst.n(); ++n) {
    T* d = dst.plane(n, begin);
    const T* s = src.plane(n, 0);
    for (std::size_t i = 0; i < count; ++i) d[i] += s[i];
  }
}

template <typename T>
BasicTensor<T> pad_constant(const BasicTensor<T>& x, int pad, T value) {
  if (pad == 0) return x;
  BasicTensor<T> out({x.n(), x.c(), x.h() + 2 * pad, x.w() + 2 * pad}, value);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int y = 0; y < x.h(); ++y) {
        std::copy_n(x.plane(n, c) + static_cast<std::size_t>(y) * x.w(), x.w(),
                    out.plane(n, c) + static_cast<std::size_t>(y + pad) * out.w() + pad);
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& x, int pad) {
  if (pad == 0) return x;
  BasicTensor<T> out({x.n(), x.c(), x.h() - 2 * pad, x.w() - 2 * pad});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int y = 0; y < out.h(); ++y) {
        std::copy_n(x.plane(n, c) + static_cast<std::size_t>(y + pad) * x.w() + pad, out.w(),
                    out.plane(n, c) + static_cast<std::size_t>(y) * out.w());
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, std::span<const T> bias) {
  const int features = static_cast<int>(x.size() / std::max(1, x.n()));
  if (weight.c() * weight.h() * weight.w() != features) {
    throw ShapeError("linear: weight " + weight.shape().str() + " expects " +
                     std::to_string(weight.c() * weight.h() * weight.w()) + " features, input has " +
                     std::to_string(features));
  }
  const int out_f = weight.n();
  BasicTensor<T> y({x.n(), out_f, 1, 1});
  gemm<T>(false, true, x.n(), out_f, features, x.data(), features, weight.data(), features, y.data(), out_f, false);
  if (!bias.empty()) {
    for (int n = 0; n < x.n(); ++n) {
      for (int o = 0; o < out_f; ++o) y(n, o, 0, 0) += bias[o];
    }
  }
  return y;
}

template <typename T>
LinearGrads<T> linear_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x, const BasicTensor<T>& weight) {
  const int features = static_cast<int>(x.size() / std::max(1, x.n()));
  const int out_f = weight.n();
  LinearGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(weight.shape()), std::vector<T>(out_f, T{0})};
  gemm<T>(false, false, x.n(), features, out_f, grad_out.data(), out_f, weight.data(), features, g.input.data(),
          features, false);
  gemm<T>(true, false, out_f, features, x.n(), grad_out.data(), out_f, x.data(), features, g.weight.data(),
          features, false);
  for (int o = 0; o < out_f; ++o) {
    T acc = 0;
    for (int n = 0; n < x.n(); ++n) acc += grad_out(n, o, 0, 0);
    g.bias[o] = acc;
  }
  return g;
}

template <typename T>
BasicTensor<T> batch_norm_train(const BasicTensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                                std::span<T> running_mean, std::span<T> running_var, T momentum, T eps,
                                BatchNormCache<T>& cache) {
  const int C = x.c();
  const std::size_t p = x.shape().plane();
  const std::size_t count = p * x.n();
  BasicTensor<T> y(x.shape());
  cache.normalized = BasicTensor<T>(x.shape());
  cache.inv_std.assign(C, T{0});
  for (int c = 0; c < C; ++c) {
    double sum = 0;
    for (int n = 0; n < x.n(); ++n) {
      const T* d = x.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) sum += d[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0;
    for (int n = 0; n < x.n(); ++n) {
      const T* d = x.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) {
        const double diff = d[i] - mean;
        sq += diff * diff;
      }
    }
    const double var = sq / static_cast<double>(count);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + eps));
    cache.inv_std[c] = inv;
    for (int n = 0; n < x.n(); ++n) {
      const T* d = x.plane(n, c);
      T* nd = cache.normalized.plane(n, c);
      T* yd = y.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) {
        nd[i] = static_cast<T>((d[i] - mean) * inv);
        yd[i] = gamma[c] * nd[i] + beta[c];
      }
    }
    const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
    running_mean[c] = static_cast<T>((1 - momentum) * running_mean[c] + momentum * mean);
    running_var[c] = static_cast<T>((1 - momentum) * running_var[c] + momentum * unbiased);
  }
  return y;
}

template <typename T>
BasicTensor<T> batch_norm_eval(const BasicTensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                               std::span<const T> running_mean, std::span<const T> running_var, T eps) {
  BasicTensor<T> y(x.shape());
  const std::size_t p = x.shape().plane();
  for (int c = 0; c < x.c(); ++c) {
    const T scale = gamma[c] / std::sqrt(running_var[c] + eps);
    const T shift = beta[c] - running_mean[c] * scale;
    for (int n = 0; n < x.n(); ++n) {
      const T* d = x.plane(n, c);
      T* yd = y.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) yd[i] = d[i] * scale + shift;
    }
  }
  return y;
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>& grad_out, std::span<const T> gamma,
                                      const BatchNormCache<T>& cache) {
  const Shape& s = grad_out.shape();
  const std::size_t p = s.plane();
  const T count = static_cast<T>(p * s.n);
  BatchNormGrads<T> g{BasicTensor<T>(s), std::vector<T>(s.c, T{0}), std::vector<T>(s.c, T{0})};
  for (int c = 0; c < s.c; ++c) {
    T dbeta = 0;
    T dgamma = 0;
    for (int n = 0; n < s.n; ++n) {
      const T* go = grad_out.plane(n, c);
      const T* xh = cache.normalized.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) {
        dbeta += go[i];
        dgamma += go[i] * xh[i];
      }
    }
    g.beta[c] = dbeta;
    g.gamma[c] = dgamma;
    const T k = gamma[c] * cache.inv_std[c] / count;
    for (int n = 0; n < s.n; ++n) {
      const T* go = grad_out.plane(n, c);
      const T* xh = cache.normalized.plane(n, c);
      T* gi = g.input.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) gi[i] = k * (count * go[i] - dbeta - xh[i] * dgamma);
    }
  }
  return g;
}

#define PIDI_INSTANTIATE_OPS(T)                                                                            \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const ConvSpec&);           \
  template BasicTensor<T> conv2d_reference(const BasicTensor<T>&, const BasicTensor<T>&, const ConvSpec&); \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                        const ConvSpec&);                                                  \
  template void add_channel_bias(BasicTensor<T>&, std::span<const T>);                                     \
  template std::vector<T> channel_sum(const BasicTensor<T>&);                                              \
  template PoolResult<T> pool2x2(const BasicTensor<T>&, PoolMode);                                         \
  template BasicTensor<T> pool2x2_backward(const BasicTensor<T>&, const Shape&, PoolMode,                  \
                                           std::span<const std::uint32_t>);                                \
  template PoolResult<T> max_pool(const BasicTensor<T>&, int, int, int);                                   \
  template BasicTensor<T> max_pool_backward(const BasicTensor<T>&, const Shape&, std::span<const std::uint32_t>); \
  template BasicTensor<T> upsample_bilinear(const BasicTensor<T>&, int, int);                              \
  template BasicTensor<T> upsample_bilinear_backward(const BasicTensor<T>&, const Shape&);                 \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                          \
  template BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>&, const Shape&);                   \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> prelu(const BasicTensor<T>&, std::span<const T>);                                \
  template PReluGrads<T> prelu_backward(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>); \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> sigmoid_backward(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> activation(const BasicTensor<T>&, ActivationKind, std::span<const T>);           \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                               \
  template void add_inplace(BasicTensor<T>&, const BasicTensor<T>&);                                       \
  template BasicTensor<T> multiply_by_map(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template MapProductGrads<T> multiply_by_map_backward(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                                       const BasicTensor<T>&);                             \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const>);                         \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, int, int);                                 \
  template void accumulate_channels(BasicTensor<T>&, const BasicTensor<T>&, int);                          \
  template BasicTensor<T> pad_constant(const BasicTensor<T>&, int, T);                                     \
  template BasicTensor<T> crop(const BasicTensor<T>&, int);                                                \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>);        \
  template LinearGrads<T> linear_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> batch_norm_train(const BasicTensor<T>&, std::span<const T>, std::span<const T>,  \
                                           std::span<T>, std::span<T>, T, T, BatchNormCache<T>&);          \
  template BasicTensor<T> batch_norm_eval(const BasicTensor<T>&, std::span<const T>, std::span<const T>,   \
                                          std::span<const T>, std::span<const T>, T);                      \
  template BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>&, std::span<const T>, const BatchNormCache<T>&);

PIDI_INSTANTIATE_OPS(float)
PIDI_INSTANTIATE_OPS(double)

#undef PIDI_INSTANTIATE_OPS

}  // namespace pidi
