#include "pidi/cost.hpp"

#include <cstdio>

namespace pidi::analysis {

std::string format_table(const CostReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%-12s %16s\n"
                "%-12s %16.4e\n"
                "%-12s %16.4e\n"
                "%-12s %16.4e\n"
                "%-12s %16lld\n"
                "%-12s %16lld\n"
                "%-12s %16.4f\n",
                "metric", "value", "FLOPs", static_cast<double>(r.flops), "BOPs", static_cast<double>(r.bops), "OPs",
                r.ops(), "FP-params", static_cast<long long>(r.fp_params), "B-params",
                static_cast<long long>(r.b_params), "Memory(Mbit)", static_cast<double>(r.memory_bits()) / 1e6);
  return buf;
}

std::string format_key_values(const CostReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "flops=%lld\nbops=%lld\nops=%.3f\nfp_params=%lld\nb_params=%lld\nmemory_bits=%lld\n",
                static_cast<long long>(r.flops), static_cast<long long>(r.bops), r.ops(),
                static_cast<long long>(r.fp_params), static_cast<long long>(r.b_params),
                static_cast<long long>(r.memory_bits()));
  return buf;
}

}  // namespace pidi::analysis
