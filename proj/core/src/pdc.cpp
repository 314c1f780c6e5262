#include "pidi/pdc.hpp"

#include <array>
#include <stdexcept>
#include <type_traits>

#include "pidi/parallel.hpp"

namespace pidi::pdc {
namespace {

// Counter-clockwise ring starting at the top-left corner.
constexpr std::array<Offset, 8> kRing{{{-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}}};

void check_spec(const ProbePattern& pattern, const ConvSpec& spec, const char* what) {
  spec.validate();
  if (spec.kernel != pattern.window) {
    throw ShapeError(std::string(what) + ": kernel_size " + std::to_string(spec.kernel) + " does not match " +
                     kind_name(pattern.kind) + " window " + std::to_string(pattern.window));
  }
}

void check_weights(const Shape& w, const ProbePattern& pattern, const char* what) {
  if (w.h != pattern.size() || w.w != 1) {
    throw ShapeError(std::string(what) + ": pair weights must be [O, I/g, " + std::to_string(pattern.size()) +
                     ", 1], got " + w.str());
  }
}

template <typename T>
T fetch(const T* plane, int h, int w, int y, int x) {
  return (y >= 0 && y < h && x >= 0 && x < w) ? plane[static_cast<std::size_t>(y) * w + x] : T{0};
}

}  // namespace

ProbePattern probe_pattern(Kind kind) {
  ProbePattern p;
  p.kind = kind;
  switch (kind) {
    case Kind::cpdc:
      p.window = 3;
      for (const Offset& o : kRing) p.pairs.push_back({o, {0, 0}});
      break;
    case Kind::apdc:
      p.window = 3;
      for (std::size_t i = 0; i < kRing.size(); ++i) p.pairs.push_back({kRing[i], kRing[(i + 1) % kRing.size()]});
      break;
    case Kind::rpdc:
      p.window = 5;
      for (const Offset& o : kRing) p.pairs.push_back({{2 * o.dy, 2 * o.dx}, o});
      break;
  }
  return p;
}

char kind_letter(Kind kind) {
  switch (kind) {
    case Kind::cpdc:
      return 'C';
    case Kind::apdc:
      return 'A';
    case Kind::rpdc:
      return 'R';
  }
  return '?';
}

std::string kind_name(Kind kind) {
  switch (kind) {
    case Kind::cpdc:
      return "CPDC";
    case Kind::apdc:
      return "APDC";
    case Kind::rpdc:
      return "RPDC";
  }
  return "?";
}

int same_padding(Kind kind) { return kind == Kind::rpdc ? 2 : 1; }

template <typename T>
BasicTensor<T> reparameterize(const BasicTensor<T>& weights, const ProbePattern& pattern) {
  check_weights(weights.shape(), pattern, "reparameterize");
  const int k = pattern.window;
  const int r = pattern.radius();
  BasicTensor<T> kernel({weights.n(), weights.c(), k, k});
  for (int o = 0; o < weights.n(); ++o) {
    for (int c = 0; c < weights.c(); ++c) {
      for (int i = 0; i < pattern.size(); ++i) {
        const PixelPair& pp = pattern.pairs[i];
        const T wv = weights(o, c, i, 0);
        kernel(o, c, pp.sampled.dy + r, pp.sampled.dx + r) += wv;
        kernel(o, c, pp.reference.dy + r, pp.reference.dx + r) -= wv;
      }
    }
  }
  return kernel;
}

template <typename T>
BasicTensor<T> reparameterize_backward(const BasicTensor<T>& grad_kernel, const ProbePattern& pattern) {
  const int r = pattern.radius();
  if (grad_kernel.h() != pattern.window || grad_kernel.w() != pattern.window) {
    throw ShapeError("reparameterize_backward: kernel gradient " + grad_kernel.shape().str() +
                     " does not match window " + std::to_string(pattern.window));
  }
  BasicTensor<T> g({grad_kernel.n(), grad_kernel.c(), pattern.size(), 1});
  for (int o = 0; o < grad_kernel.n(); ++o) {
    for (int c = 0; c < grad_kernel.c(); ++c) {
      for (int i = 0; i < pattern.size(); ++i) {
        const PixelPair& pp = pattern.pairs[i];
        g(o, c, i, 0) = grad_kernel(o, c, pp.sampled.dy + r, pp.sampled.dx + r) -
                        grad_kernel(o, c, pp.reference.dy + r, pp.reference.dx + r);
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> pair_differences(const BasicTensor<T>& input, const ProbePattern& pattern, const ConvSpec& spec) {
  check_spec(pattern, spec, "pair_differences");
  const Shape& s = input.shape();
  const int oh = spec.output_extent(s.h);
  const int ow = spec.output_extent(s.w);
  if (oh < 1 || ow < 1) throw ShapeError("pair_differences: empty output for input " + s.str());
  const int m = pattern.size();
  const int r = pattern.radius();
  BasicTensor<T> out({s.n, s.c * m, oh, ow});
  parallel_for(static_cast<std::size_t>(s.n) * s.c, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t pl = lo; pl < hi; ++pl) {
      const int n = static_cast<int>(pl / s.c);
      const int c = static_cast<int>(pl % s.c);
      const T* in = input.plane(n, c);
      for (int i = 0; i < m; ++i) {
        const PixelPair& pp = pattern.pairs[i];
        T* d = out.plane(n, c * m + i);
        for (int oy = 0; oy < oh; ++oy) {
          const int cy = oy * spec.stride - spec.padding + r * spec.dilation;
          for (int ox = 0; ox < ow; ++ox) {
            const int cx = ox * spec.stride - spec.padding + r * spec.dilation;
            const T a = fetch(in, s.h, s.w, cy + pp.sampled.dy * spec.dilation, cx + pp.sampled.dx * spec.dilation);
            const T b = fetch(in, s.h, s.w, cy + pp.reference.dy * spec.dilation,
                              cx + pp.reference.dx * spec.dilation);
            d[static_cast<std::size_t>(oy) * ow + ox] = a - b;
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> pair_differences_backward(const BasicTensor<T>& grad_diff, const Shape& input_shape,
                                         const ProbePattern& pattern, const ConvSpec& spec) {
  check_spec(pattern, spec, "pair_differences_backward");
  const int m = pattern.size();
  const int r = pattern.radius();
  const Shape& s = input_shape;
  const int oh = spec.output_extent(s.h);
  const int ow = spec.output_extent(s.w);
  if (grad_diff.shape() != Shape{s.n, s.c * m, oh, ow}) {
    throw ShapeError("pair_differences_backward: gradient " + grad_diff.shape().str() + " does not match input " +
                     s.str());
  }
  BasicTensor<T> g(s);
  parallel_for(static_cast<std::size_t>(s.n) * s.c, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t pl = lo; pl < hi; ++pl) {
      const int n = static_cast<int>(pl / s.c);
      const int c = static_cast<int>(pl % s.c);
      T* gi = g.plane(n, c);
      auto deposit = [&](int y, int x, T v) {
        if (y >= 0 && y < s.h && x >= 0 && x < s.w) gi[static_cast<std::size_t>(y) * s.w + x] += v;
      };
      for (int i = 0; i < m; ++i) {
        const PixelPair& pp = pattern.pairs[i];
        const T* d = grad_diff.plane(n, c * m + i);
        for (int oy = 0; oy < oh; ++oy) {
          const int cy = oy * spec.stride - spec.padding + r * spec.dilation;
          for (int ox = 0; ox < ow; ++ox) {
            const int cx = ox * spec.stride - spec.padding + r * spec.dilation;
            const T v = d[static_cast<std::size_t>(oy) * ow + ox];
            deposit(cy + pp.sampled.dy * spec.dilation, cx + pp.sampled.dx * spec.dilation, v);
            deposit(cy + pp.reference.dy * spec.dilation, cx + pp.reference.dx * spec.dilation, -v);
          }
        }
      }
    }
  });
  return g;
}

template <typename T>
BasicTensor<T> pdc_forward_pairs(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                 const ProbePattern& pattern, const ConvSpec& spec) {
  if constexpr (std::is_same_v<T, float>) {
    return pdc_forward_pairs(input.template cast<double>(), weights.template cast<double>(), pattern, spec)
        .template cast<float>();
  }
  check_weights(weights.shape(), pattern, "pdc_forward_pairs");
  // Same channel checks as the vanilla path, against the re-parameterized kernel shape.
  conv2d_output_shape(input.shape(), {weights.n(), weights.c(), pattern.window, pattern.window}, spec);
  const BasicTensor<T> diff = pair_differences(input, pattern, spec);
  const BasicTensor<T> w1 = weights.reshaped({weights.n(), weights.c() * pattern.size(), 1, 1});
  return conv2d(diff, w1, ConvSpec{1, 1, 0, 1, spec.groups});
}

template <typename T>
ConvGrads<T> pdc_backward_pairs(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                const BasicTensor<T>& weights, const ProbePattern& pattern, const ConvSpec& spec) {
  check_weights(weights.shape(), pattern, "pdc_backward_pairs");
  const BasicTensor<T> diff = pair_differences(input, pattern, spec);
  const BasicTensor<T> w1 = weights.reshaped({weights.n(), weights.c() * pattern.size(), 1, 1});
  ConvGrads<T> g = conv2d_backward(grad_out, diff, w1, ConvSpec{1, 1, 0, 1, spec.groups});
  return {pair_differences_backward(g.input, input.shape(), pattern, spec), g.weight.reshaped(weights.shape())};
}

template <typename T>
BasicTensor<T> pdc_forward_reparam(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const ConvSpec& spec) {
  if constexpr (std::is_same_v<T, float>) {
    return conv2d(input.template cast<double>(), kernel.template cast<double>(), spec).template cast<float>();
  }
  return conv2d(input, kernel, spec);
}

#define PIDI_INSTANTIATE_PDC(T)                                                                                 \
  template BasicTensor<T> reparameterize(const BasicTensor<T>&, const ProbePattern&);                          \
  template BasicTensor<T> reparameterize_backward(const BasicTensor<T>&, const ProbePattern&);                 \
  template BasicTensor<T> pair_differences(const BasicTensor<T>&, const ProbePattern&, const ConvSpec&);       \
  template BasicTensor<T> pair_differences_backward(const BasicTensor<T>&, const Shape&, const ProbePattern&,  \
                                                    const ConvSpec&);                                           \
  template BasicTensor<T> pdc_forward_pairs(const BasicTensor<T>&, const BasicTensor<T>&, const ProbePattern&, \
                                            const ConvSpec&);                                                   \
  template ConvGrads<T> pdc_backward_pairs(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                           const ProbePattern&, const ConvSpec&);                               \
  template BasicTensor<T> pdc_forward_reparam(const BasicTensor<T>&, const BasicTensor<T>&, const ConvSpec&);

PIDI_INSTANTIATE_PDC(float)
PIDI_INSTANTIATE_PDC(double)

#undef PIDI_INSTANTIATE_PDC

}  // namespace pidi::pdc
