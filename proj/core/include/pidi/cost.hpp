#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pidi::analysis {

/// Complexity of a network at one input shape. One multiply-accumulate counts
/// as one FLOP (full precision) or one BOP (binary).
struct CostReport {
  std::int64_t flops = 0;
  std::int64_t bops = 0;
  std::int64_t fp_params = 0;
  std::int64_t b_params = 0;

  double ops() const noexcept { return static_cast<double>(flops) + static_cast<double>(bops) / 64.0; }
  std::int64_t memory_bits() const noexcept { return 32 * fp_params + b_params; }

  CostReport& operator+=(const CostReport& o) noexcept {
    flops += o.flops;
    bops += o.bops;
    fp_params += o.fp_params;
    b_params += o.b_params;
    return *this;
  }
  friend bool operator==(const CostReport&, const CostReport&) = default;
};

/// Raised by count_ops when a layer has no cost model.
class UnsupportedLayer : public std::invalid_argument {
 public:
  explicit UnsupportedLayer(const std::string& kind)
      : std::invalid_argument("no cost model for layer '" + kind + "'") {}
};

/// Aligned human-readable table.
std::string format_table(const CostReport& r);
/// One key=value per line: flops, bops, ops, fp_params, b_params, memory_bits.
std::string format_key_values(const CostReport& r);

}  // namespace pidi::analysis
