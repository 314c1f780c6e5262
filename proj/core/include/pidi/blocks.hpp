#pragma once

#include <array>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pidi/layers.hpp"

namespace pidi::nn {

enum class BlockKind { cpdc, apdc, rpdc, vanilla };

char block_letter(BlockKind kind);

/// Raised for malformed architecture strings; position is a 0-based offset.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& message, std::size_t position);
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Grammar: TOKEN := C|A|R|V, GROUP := '[' TOKEN+ ']' 'x' INT | TOKEN,
/// CONFIG := GROUP ('-' GROUP)*. The expansion must have exactly 16 entries.
std::vector<BlockKind> parse_config(const std::string& text);

/// Canonical string: the shortest "[P]xN" form when the list is a repeated
/// pattern, otherwise runs of equal kinds joined with '-'.
std::string render_config(std::span<const BlockKind> kinds);

enum class Task { edge, classify };

struct NetworkSpec {
  Task task = Task::edge;

  // Edge task.
  std::vector<BlockKind> block_kinds = parse_config("[CARV]x4");
  int base_channels = 60;
  bool with_cdcm = true;
  bool with_csam = true;
  /// 0 selects round(0.4·C).
  int cdcm_channels = 0;
  /// PDC layers hold re-parameterized vanilla kernels.
  bool reparameterized = false;

  // Classification task.
  double xi = 0.2;
  pdc::Kind bipdc_kind = pdc::Kind::cpdc;
  int stem_channels = 32;
  std::vector<int> stage_widths{32, 64, 128};
  int units_per_stage = 2;
  int num_classes = 10;
  float tau = 0.0f;
  bnn::ScaleMode scale = bnn::ScaleMode::none;

  int effective_cdcm_channels() const;
  void validate() const;

  /// "key=value;key=value" form stored in checkpoints.
  std::string to_string() const;
  static NetworkSpec from_string(const std::string& text);
};

// ---------------------------------------------------------------------------
// ReplicaPool
// ---------------------------------------------------------------------------

/// Average-pool 2×2, then M copies of the result followed by the element-wise
/// mean of its N contiguous channel segments: C' = M·C + C/N. When
/// out_channels > 0 trailing channels are dropped to that width.
template <typename T>
BasicTensor<T> replica_pool(const BasicTensor<T>& x, int m, int n, int out_channels = 0);

template <typename T>
BasicTensor<T> replica_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape, int m, int n,
                                     int out_channels = 0);

struct ReplicaConfig {
  int m = 1;
  int n = 1;
  /// Width before truncation.
  int produced = 0;
};

/// (M, N) reaching `target` from `channels`: the largest M with a positive
/// remainder r = target − M·C dividing C (N = C/r); otherwise overshoot with
/// N = 1 and truncate.
ReplicaConfig replica_config(int channels, int target);

template <typename T>
class ReplicaPool : public Module<T> {
 public:
  ReplicaPool(int m, int n, int out_channels = 0) : m_(m), n_(n), out_channels_(out_channels) {}

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  std::string kind() const override { return "replicapool"; }

 private:
  int m_, n_, out_channels_;
  Shape in_shape_{};
};

// ---------------------------------------------------------------------------
// PiDiNet components
// ---------------------------------------------------------------------------

/// 1×1 reduction to M channels, ReLU, then four dilated 3×3 convolutions
/// (rates 5, 7, 9, 11) summed.
template <typename T>
class Cdcm : public Module<T> {
 public:
  static constexpr std::array<int, 4> kRates{5, 7, 9, 11};

  Cdcm(int in_channels, int out_channels, std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  void set_training(bool on) override;
  std::string kind() const override { return "cdcm"; }

 private:
  Conv2d<T> reduce_;
  ReLU<T> relu_;
  std::vector<std::unique_ptr<Conv2d<T>>> branches_;
};

/// x ⊙ sigmoid(conv3×3(relu(conv1×1(x)))) with a one-channel attention map.
template <typename T>
class Csam : public Module<T> {
 public:
  Csam(int channels, std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  void set_training(bool on) override;
  std::string kind() const override { return "csam"; }

  /// Attention map from the last forward call.
  const BasicTensor<T>& attention() const noexcept { return attention_; }

 private:
  Conv2d<T> fc_;
  ReLU<T> relu_;
  Conv2d<T> conv_;
  Sigmoid<T> gate_;
  BasicTensor<T> input_, attention_;
};

/// Depthwise 3×3 (PDC or vanilla) → ReLU → pointwise 1×1, plus a shortcut that
/// is a 1×1 convolution with bias when `project` is set.
template <typename T>
class PiDiBlock : public Module<T> {
 public:
  PiDiBlock(ModulePtr<T> depthwise, int in_channels, int out_channels, bool project, std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  void set_training(bool on) override;
  std::string kind() const override { return "pidiblock"; }

  ModulePtr<T>& depthwise() noexcept { return depthwise_; }

 private:
  ModulePtr<T> depthwise_;
  ReLU<T> relu_;
  Conv2d<T> pointwise_;
  std::unique_ptr<Conv2d<T>> shortcut_;
};

/// Edge detector: a 16-block backbone in four stages (C, 2C, 4C, 4C channels,
/// max pooling before stages 2–4), one side head per stage and a fusion layer.
template <typename T>
class PiDiNet {
 public:
  static constexpr int kMaps = 5;

  PiDiNet(const NetworkSpec& spec, std::mt19937_64& rng);

  /// Four side maps then the fused map, each [N, 1, H, W] in (0, 1).
  std::vector<BasicTensor<T>> forward(const BasicTensor<T>& x);
  /// Gradients with respect to the five maps; returns the input gradient.
  BasicTensor<T> backward(std::span<const BasicTensor<T>> grad_maps);

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out);
  std::vector<ParamRef<T>> parameters();
  void zero_grad();
  analysis::CostReport cost(const Shape& in) const;
  void set_training(bool on);

  /// Intermediate features: "init", "stage1".."stage4".
  BasicTensor<T> features(const BasicTensor<T>& x, const std::string& tap);

  /// Replaces every PDC layer with its re-parameterized vanilla convolution.
  void reparameterize();

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::int64_t parameter_count();

 private:
  BasicTensor<T> run_backbone(const BasicTensor<T>& x, std::array<BasicTensor<T>, 4>& stages, int stop_stage);

  NetworkSpec spec_;
  ModulePtr<T> init_;
  std::vector<std::unique_ptr<PiDiBlock<T>>> blocks_;
  std::array<Pool2x2<T>, 3> pools_{Pool2x2<T>(PoolMode::max), Pool2x2<T>(PoolMode::max), Pool2x2<T>(PoolMode::max)};
  std::array<std::unique_ptr<Sequential<T>>, 4> sides_;
  std::unique_ptr<Conv2d<T>> fuse_;
  std::array<Shape, 4> side_shapes_{};
  std::array<BasicTensor<T>, 4> side_probs_;
  BasicTensor<T> fused_prob_;
};

/// Bi-PiDiNet classifier: full-precision 3×3 stride-2 stem with BN, optional
/// ReplicaPool to the first stage width, residual hybrid units (reduction
/// units use stride 2 and a ReplicaPool shortcut), global pooling and a
/// full-precision linear classifier.
template <typename T>
std::unique_ptr<Sequential<T>> build_bipidinet(const NetworkSpec& spec, std::mt19937_64& rng);

/// Bi-PiDiNet shaped for 224×224 inputs: 64-channel stem, widths 128/192/384/768, four units per stage.
NetworkSpec imagenet_bipidinet_spec(double xi = 0.2);

/// Reference ResNet-18 (full precision) for cost comparisons.
template <typename T>
std::unique_ptr<Sequential<T>> build_resnet18(std::mt19937_64& rng, int num_classes = 1000);

/// Bi-Real-style binary ResNet-18: binary 3×3 convolutions with a shortcut
/// around each, average-pool + 1×1 convolution on reduction shortcuts.
template <typename T>
std::unique_ptr<Sequential<T>> build_bireal18(std::mt19937_64& rng, int num_classes = 1000);

}  // namespace pidi::nn
