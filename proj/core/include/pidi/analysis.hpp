#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pidi/binary.hpp"
#include "pidi/blocks.hpp"
#include "pidi/cost.hpp"

namespace pidi::analysis {

/// Centered 2-D DFT magnitude of every plane of `map` ([N, C, H, W] → same
/// shape); zero frequency sits at (H/2, W/2). Direct evaluation in double.
Tensor64 fft2_magnitude(const Tensor64& map);
/// log(1 + |F|) of the centered magnitude.
Tensor64 fft2_log_magnitude(const Tensor64& map);

/// Spectra of the shifting filters of a PDC pattern, one [1, 1, n, n] map per
/// pixel pair: +1 at the sampled offset, −1 at the reference offset.
std::vector<Tensor64> shifting_filter_spectra(const pdc::ProbePattern& pattern, int n);
/// Spectra of the k·k one-hot shifting filters of a vanilla k×k kernel.
std::vector<Tensor64> vanilla_shifting_spectra(int k, int n);

/// Share of spectral energy (|F|²) outside the central H/2 × W/2 block of a
/// centered spectrum. Returns 0 for an all-zero spectrum.
double high_frequency_ratio(const Tensor64& spectrum);

/// Mean over channels of each image, centered magnitude spectrum, mean over
/// the batch: [1, 1, H, W].
Tensor64 spectrum_of_features(const Tensor& features);

/// spectrum_of_features of `net.features(batch, tap)`; unknown taps throw.
template <typename Net>
Tensor64 feature_spectrum(Net& net, const Tensor& batch, const std::string& tap) {
  return spectrum_of_features(net.features(batch, tap));
}

/// Walks the network at `input` and sums per-layer costs; the classifier is
/// excluded. Unknown layers raise UnsupportedLayer.
CostReport count_ops(const nn::Module<float>& net, const Shape& input);
CostReport count_ops(const nn::PiDiNet<float>& net, const Shape& input);

/// Number of 0/1 changes around the circular 8-bit code.
int lbp_transitions(std::uint8_t code);
bool lbp_is_uniform(std::uint8_t code, int max_transitions = 4);

/// 8-bit LBP code of a binary 3×3 kernel slice: ring starts at (−1,−1) and runs
/// counter-clockwise; the first ring position is the most significant bit.
std::uint8_t lbp_code(const std::array<bool, 9>& kernel);

struct LbpStats {
  std::array<std::int64_t, 256> counts{};
  /// (code, count) sorted by descending count, ties by code.
  std::vector<std::pair<int, std::int64_t>> sorted;
  std::int64_t uniform = 0;
  std::int64_t non_uniform = 0;
  int max_transitions = 4;
};

/// Statistics over every [o, i] 3×3 slice of binary weights [O, I, 3, 3].
/// weights holds ±1 values (the sign of latent weights).
LbpStats lbp_pattern_stats(const Tensor& weights, int max_transitions = 4);
/// Same over packed bits of shape [O, I, 3, 3].
LbpStats lbp_pattern_stats(const bnn::BitTensor& weights, int max_transitions = 4);

/// Plane (0, 0) as a CSV matrix, one line per row.
std::string spectrum_csv(const Tensor64& spectrum);
/// "code,count,transitions,uniform" rows in sorted order.
std::string lbp_csv(const LbpStats& stats);

}  // namespace pidi::analysis
