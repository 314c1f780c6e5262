#include "pidi/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include "pidi/parallel.hpp"

namespace pidi::analysis {
namespace {

using cd = std::complex<double>;

std::vector<cd> twiddles(int n) {
  std::vector<cd> t(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) t[k] = std::polar(1.0, -2.0 * std::numbers::pi * k / n);
  return t;
}

// Direct DFT of one h×w plane; rows then columns.
std::vector<cd> dft2(const double* x, int h, int w) {
  const std::vector<cd> th = twiddles(h), tw = twiddles(w);
  std::vector<cd> rows(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int v = 0; v < w; ++v) {
      cd acc{};
      for (int x0 = 0; x0 < w; ++x0) acc += x[y * w + x0] * tw[(static_cast<std::size_t>(v) * x0) % w];
      rows[static_cast<std::size_t>(y) * w + v] = acc;
    }
  }
  std::vector<cd> out(rows.size());
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      cd acc{};
      for (int y = 0; y < h; ++y) acc += rows[static_cast<std::size_t>(y) * w + v] * th[(static_cast<std::size_t>(u) * y) % h];
      out[static_cast<std::size_t>(u) * w + v] = acc;
    }
  }
  return out;
}

Tensor64 embed_filter(const pdc::ProbePattern& pattern, int n, const pdc::PixelPair* pair, int one_hot) {
  Tensor64 f({1, 1, n, n});
  const int r = pattern.radius();
  auto at = [&](int dy, int dx) -> double& { return f(0, 0, ((dy % n) + n) % n, ((dx % n) + n) % n); };
  if (pair) {
    at(pair->sampled.dy, pair->sampled.dx) += 1.0;
    at(pair->reference.dy, pair->reference.dx) -= 1.0;
  } else {
    const int k = pattern.window;
    at(one_hot / k - r, one_hot % k - r) = 1.0;
  }
  return f;
}

template <typename Bit>
LbpStats collect_lbp(const Shape& s, Bit bit, int max_transitions) {
  if (s.h != 3 || s.w != 3) throw ShapeError("lbp_pattern_stats: kernels must be 3x3, got " + s.str());
  LbpStats st;
  st.max_transitions = max_transitions;
  for (int o = 0; o < s.n; ++o) {
    for (int i = 0; i < s.c; ++i) {
      std::array<bool, 9> k{};
      for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) k[y * 3 + x] = bit(o, i, y, x);
      }
      const std::uint8_t code = lbp_code(k);
      ++st.counts[code];
      if (lbp_is_uniform(code, max_transitions)) {
        ++st.uniform;
      } else {
        ++st.non_uniform;
      }
    }
  }
  for (int c = 0; c < 256; ++c) {
    if (st.counts[c] > 0) st.sorted.emplace_back(c, st.counts[c]);
  }
  std::sort(st.sorted.begin(), st.sorted.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return st;
}

}  // namespace

Tensor64 fft2_magnitude(const Tensor64& map) {
  const int h = map.h(), w = map.w();
  if (h < 1 || w < 1) throw ShapeError("fft2_magnitude: empty map");
  Tensor64 out(map.shape());
  const std::size_t planes = static_cast<std::size_t>(map.n()) * map.c();
  parallel_for(planes, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) {
      const int n = static_cast<int>(p / map.c()), c = static_cast<int>(p % map.c());
      const std::vector<cd> f = dft2(map.plane(n, c), h, w);
      double* dst = out.plane(n, c);
      for (int u = 0; u < h; ++u) {
        for (int v = 0; v < w; ++v) {
          dst[static_cast<std::size_t>((u + h / 2) % h) * w + (v + w / 2) % w] =
              std::abs(f[static_cast<std::size_t>(u) * w + v]);
        }
      }
    }
  });
  return out;
}

Tensor64 fft2_log_magnitude(const Tensor64& map) {
  Tensor64 m = fft2_magnitude(map);
  for (double& v : m.values()) v = std::log1p(v);
  return m;
}

std::vector<Tensor64> shifting_filter_spectra(const pdc::ProbePattern& pattern, int n) {
  if (n < pattern.window) throw std::invalid_argument("shifting_filter_spectra: grid smaller than the window");
  std::vector<Tensor64> out;
  for (const pdc::PixelPair& pair : pattern.pairs) out.push_back(fft2_magnitude(embed_filter(pattern, n, &pair, 0)));
  return out;
}

std::vector<Tensor64> vanilla_shifting_spectra(int k, int n) {
  if (k < 1 || k % 2 == 0 || n < k) throw std::invalid_argument("vanilla_shifting_spectra: need odd k ≤ n");
  pdc::ProbePattern p;
  p.window = k;
  std::vector<Tensor64> out;
  for (int i = 0; i < k * k; ++i) out.push_back(fft2_magnitude(embed_filter(p, n, nullptr, i)));
  return out;
}

double high_frequency_ratio(const Tensor64& spectrum) {
  const int h = spectrum.h(), w = spectrum.w();
  const int y0 = h / 2 - h / 4, x0 = w / 2 - w / 4;
  const int y1 = y0 + h / 2, x1 = x0 + w / 2;
  double total = 0, low = 0;
  for (int n = 0; n < spectrum.n(); ++n) {
    for (int c = 0; c < spectrum.c(); ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double e = spectrum(n, c, y, x) * spectrum(n, c, y, x);
          total += e;
          if (y >= y0 && y < y1 && x >= x0 && x < x1) low += e;
        }
      }
    }
  }
  return total > 0 ? (total - low) / total : 0.0;
}

Tensor64 spectrum_of_features(const Tensor& features) {
  const Shape s = features.shape();
  if (s.numel() == 0) throw ShapeError("spectrum_of_features: empty features");
  Tensor64 mean({s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    double* dst = mean.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const float* src = features.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < s.plane(); ++i) dst[i] /= s.c;
  }
  const Tensor64 mags = fft2_magnitude(mean);
  Tensor64 out({1, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    const double* src = mags.plane(n, 0);
    for (std::size_t i = 0; i < s.plane(); ++i) out.data()[i] += src[i] / s.n;
  }
  return out;
}

CostReport count_ops(const nn::Module<float>& net, const Shape& input) {
  CostReport r;
  net.cost(input, r);
  return r;
}

CostReport count_ops(const nn::PiDiNet<float>& net, const Shape& input) { return net.cost(input); }

int lbp_transitions(std::uint8_t code) {
  const std::uint8_t rotated = static_cast<std::uint8_t>((code << 1) | (code >> 7));
  return std::popcount(static_cast<unsigned>(code ^ rotated));
}

bool lbp_is_uniform(std::uint8_t code, int max_transitions) { return lbp_transitions(code) <= max_transitions; }

std::uint8_t lbp_code(const std::array<bool, 9>& kernel) {
  const pdc::ProbePattern ring = pdc::probe_pattern(pdc::Kind::cpdc);
  unsigned code = 0;
  for (const pdc::PixelPair& p : ring.pairs) {
    code = (code << 1) | (kernel[(p.sampled.dy + 1) * 3 + p.sampled.dx + 1] ? 1u : 0u);
  }
  return static_cast<std::uint8_t>(code);
}

LbpStats lbp_pattern_stats(const Tensor& weights, int max_transitions) {
  return collect_lbp(
      weights.shape(), [&](int o, int i, int y, int x) { return weights(o, i, y, x) >= 0.0f; }, max_transitions);
}

LbpStats lbp_pattern_stats(const bnn::BitTensor& weights, int max_transitions) {
  return collect_lbp(
      weights.shape(), [&](int o, int i, int y, int x) { return weights.bit(o, i, y, x); }, max_transitions);
}

std::string spectrum_csv(const Tensor64& spectrum) {
  std::ostringstream os;
  os.precision(12);
  for (int y = 0; y < spectrum.h(); ++y) {
    for (int x = 0; x < spectrum.w(); ++x) os << (x ? "," : "") << spectrum(0, 0, y, x);
    os << '\n';
  }
  return os.str();
}

std::string lbp_csv(const LbpStats& stats) {
  std::ostringstream os;
  os << "code,count,transitions,uniform\n";
  for (const auto& [code, count] : stats.sorted) {
    const auto c = static_cast<std::uint8_t>(code);
    os << code << ',' << count << ',' << lbp_transitions(c) << ',' << (lbp_is_uniform(c, stats.max_transitions) ? 1 : 0)
       << '\n';
  }
  return os.str();
}

}  // namespace pidi::analysis
