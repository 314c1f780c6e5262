#include "pidi/binary.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "pidi/ops.hpp"
#include "pidi/parallel.hpp"

namespace pidi::bnn {

template <typename T>
BasicTensor<T> sign(const BasicTensor<T>& x, T tau) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = sign_value(x.data()[i], tau);
  return y;
}

template <typename T>
BasicTensor<T> ste_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& pre_activation, T clip) {
  if (grad_out.shape() != pre_activation.shape()) {
    throw ShapeError("ste_backward: " + grad_out.shape().str() + " vs " + pre_activation.shape().str());
  }
  BasicTensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.data()[i] = std::abs(pre_activation.data()[i]) <= clip ? grad_out.data()[i] : T{0};
  }
  return g;
}

BitTensor::BitTensor(Shape shape)
    : shape_(shape),
      words_per_row_((shape.c + 63) / 64),
      words_(static_cast<std::size_t>(shape.n) * shape.h * shape.w * words_per_row_, 0) {}

BitTensor::BitTensor(Shape shape, std::vector<std::uint64_t> words) : BitTensor(shape) {
  if (words.size() != words_.size()) {
    throw ShapeError("packed tensor " + shape.str() + " needs " + std::to_string(words_.size()) + " words, got " +
                      std::to_string(words.size()));
  }
  words_ = std::move(words);
  const std::uint64_t mask = tail_mask();
  for (std::size_t r = 0; words_per_row_ > 0 && r < words_.size(); r += words_per_row_) {
    words_[r + words_per_row_ - 1] &= mask;
  }
}

template <typename T>
BitTensor BitTensor::pack(const BasicTensor<T>& x, T tau) {
  BitTensor b(x.shape());
  const Shape& s = x.shape();
  const std::size_t plane = s.plane();
  parallel_for(static_cast<std::size_t>(s.n) * s.h, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t rowi = lo; rowi < hi; ++rowi) {
      const int n = static_cast<int>(rowi / s.h);
      const int h = static_cast<int>(rowi % s.h);
      for (int w = 0; w < s.w; ++w) {
        std::uint64_t* dst = b.words_.data() + b.row_offset(n, h, w);
        const T* src = x.data() + x.offset(n, 0, h, w);
        for (int c = 0; c < s.c; ++c) {
          if (src[c * plane] - tau >= T{0}) dst[c >> 6] |= std::uint64_t{1} << (c & 63);
        }
      }
    }
  });
  return b;
}

Tensor BitTensor::unpack() const {
  Tensor t(shape_);
  for (int n = 0; n < shape_.n; ++n) {
    for (int c = 0; c < shape_.c; ++c) {
      for (int h = 0; h < shape_.h; ++h) {
        for (int w = 0; w < shape_.w; ++w) t(n, c, h, w) = bit(n, c, h, w) ? 1.0f : -1.0f;
      }
    }
  }
  return t;
}

void BitTensor::set(int n, int c, int h, int w, bool value) noexcept {
  std::uint64_t& word = words_[row_offset(n, h, w) + (c >> 6)];
  const std::uint64_t m = std::uint64_t{1} << (c & 63);
  word = value ? (word | m) : (word & ~m);
}

std::uint64_t BitTensor::tail_mask() const noexcept {
  const int rem = shape_.c & 63;
  return rem == 0 ? ~std::uint64_t{0} : ((std::uint64_t{1} << rem) - 1);
}

void BinaryConvSpec::validate() const {
  conv.validate();
  if (!(ste_clip > 0.0f)) throw std::invalid_argument("ste_clip must be positive");
}

Tensor bconv(const BitTensor& xb, const BitTensor& wb, const BinaryConvSpec& spec) {
  spec.validate();
  if (spec.conv.groups != 1) throw ShapeError("bconv: grouped binary convolution is not supported");
  const Shape& xs = xb.shape();
  const Shape& ws = wb.shape();
  const Shape os = conv2d_output_shape(xs, ws, spec.conv);
  if (xs.c < 1) throw ShapeError("bconv: input has no channels");
  const int k = spec.conv.kernel;
  const int words = xb.words_per_row();
  const std::uint64_t tail = xb.tail_mask();
  const int channels = xs.c;
  const int pad_sign = sign_value(0.0f - spec.tau, 0.0f) > 0 ? 1 : -1;

  // Contribution of a fully out-of-image tap: Σ_c w_c · Sign(0 − τ).
  std::vector<int> pad_term(static_cast<std::size_t>(ws.n) * k * k);
  for (int o = 0; o < ws.n; ++o) {
    for (int t = 0; t < k * k; ++t) {
      const std::uint64_t* wr = wb.row(o, t / k, t % k);
      int pc = 0;
      for (int j = 0; j < words; ++j) pc += std::popcount(wr[j]);
      pad_term[static_cast<std::size_t>(o) * k * k + t] = pad_sign * (2 * pc - channels);
    }
  }

  Tensor out(os);
  parallel_for(static_cast<std::size_t>(os.n) * os.h, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t rowi = lo; rowi < hi; ++rowi) {
      const int n = static_cast<int>(rowi / os.h);
      const int oy = static_cast<int>(rowi % os.h);
      for (int ox = 0; ox < os.w; ++ox) {
        for (int o = 0; o < os.c; ++o) {
          int acc = 0;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * spec.conv.stride - spec.conv.padding + ky * spec.conv.dilation;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * spec.conv.stride - spec.conv.padding + kx * spec.conv.dilation;
              if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) {
                acc += pad_term[(static_cast<std::size_t>(o) * k + ky) * k + kx];
                continue;
              }
              const std::uint64_t* xr = xb.row(n, iy, ix);
              const std::uint64_t* wr = wb.row(o, ky, kx);
              int pc = 0;
              for (int j = 0; j + 1 < words; ++j) pc += std::popcount(~(xr[j] ^ wr[j]));
              pc += std::popcount(~(xr[words - 1] ^ wr[words - 1]) & tail);
              acc += 2 * pc - channels;
            }
          }
          out(n, o, oy, ox) = static_cast<float>(acc);
        }
      }
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> bconv_float(const BasicTensor<T>& x, const BasicTensor<T>& latent_weight, const BinaryConvSpec& spec) {
  spec.validate();
  const T tau = static_cast<T>(spec.tau);
  const BasicTensor<T> xs = pad_constant(sign(x, tau), spec.conv.padding, sign_value(T{0}, tau));
  ConvSpec inner = spec.conv;
  inner.padding = 0;
  conv2d_output_shape(x.shape(), latent_weight.shape(), spec.conv);
  return conv2d(xs, sign(latent_weight), inner);
}

Tensor bipdc(const Tensor& x, const BitTensor& wb, const pdc::ProbePattern& pattern, const BinaryConvSpec& spec) {
  spec.validate();
  if (spec.conv.groups != 1) throw ShapeError("bipdc: grouped binary convolution is not supported");
  if (wb.shape().c != x.c() * pattern.size() || wb.shape().h != 1 || wb.shape().w != 1) {
    throw ShapeError("bipdc: packed weights must be [O, " + std::to_string(x.c() * pattern.size()) +
                     ", 1, 1], got " + wb.shape().str());
  }
  const Tensor diff = pdc::pair_differences(x, pattern, spec.conv);
  BinaryConvSpec pointwise;
  pointwise.conv = ConvSpec{1, 1, 0, 1, 1};
  return bconv(BitTensor::pack(diff, 0.0f), wb, pointwise);
}

template <typename T>
BasicTensor<T> bipdc_float(const BasicTensor<T>& x, const BasicTensor<T>& latent_weight,
                           const pdc::ProbePattern& pattern, const BinaryConvSpec& spec) {
  spec.validate();
  if (latent_weight.c() * spec.conv.groups != x.c() || latent_weight.h() != pattern.size() || latent_weight.w() != 1) {
    throw ShapeError("bipdc_float: latent weights " + latent_weight.shape().str() + " incompatible with input " +
                     x.shape().str());
  }
  const BasicTensor<T> bits = sign(pdc::pair_differences(x, pattern, spec.conv));
  const BasicTensor<T> w = sign(latent_weight).reshaped(
      {latent_weight.n(), latent_weight.c() * pattern.size(), 1, 1});
  return conv2d(bits, w, ConvSpec{1, 1, 0, 1, spec.conv.groups});
}

int split_index(double xi, int channels) {
  if (!(xi >= 0.0 && xi <= 1.0)) throw std::invalid_argument("xi must lie in [0, 1], got " + std::to_string(xi));
  return static_cast<int>(std::floor(xi * channels + 0.5));
}

template BasicTensor<float> sign(const BasicTensor<float>&, float);
template BasicTensor<double> sign(const BasicTensor<double>&, double);
template BasicTensor<float> ste_backward(const BasicTensor<float>&, const BasicTensor<float>&, float);
template BasicTensor<double> ste_backward(const BasicTensor<double>&, const BasicTensor<double>&, double);
template BitTensor BitTensor::pack(const BasicTensor<float>&, float);
template BitTensor BitTensor::pack(const BasicTensor<double>&, double);
template BasicTensor<float> bconv_float(const BasicTensor<float>&, const BasicTensor<float>&, const BinaryConvSpec&);
template BasicTensor<double> bconv_float(const BasicTensor<double>&, const BasicTensor<double>&, const BinaryConvSpec&);
template BasicTensor<float> bipdc_float(const BasicTensor<float>&, const BasicTensor<float>&, const pdc::ProbePattern&,
                                        const BinaryConvSpec&);
template BasicTensor<double> bipdc_float(const BasicTensor<double>&, const BasicTensor<double>&,
                                         const pdc::ProbePattern&, const BinaryConvSpec&);

}  // namespace pidi::bnn
