#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pidi/blocks.hpp"

namespace pidi::train {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossParams {
  double lambda = 1.1;
  double eta = 0.3;
  /// Probabilities are clamped to [eps, 1 − eps] before the logarithm.
  double eps = 1e-7;

  void validate() const;
};

/// Annotator-robust edge loss for one map [N, 1, H, W], summed over pixels and
/// images. Per image β is the fraction of pixels with y = 0 and α = λ(1 − β);
/// y = 0 contributes −α·log(1 − p), 0 < y < η nothing, y ≥ η −β·log p.
/// When grad is given it receives ∂loss/∂pred (zero where p was clamped).
template <typename T>
double edge_loss(const BasicTensor<T>& pred, const BasicTensor<T>& gt, const LossParams& params,
                 BasicTensor<T>* grad = nullptr);

/// Softmax cross-entropy of logits [N, K, 1, 1], mean over the batch.
template <typename T>
double cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels, BasicTensor<T>* grad = nullptr);

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over every parameter that carries a gradient.
template <typename T>
class Adam {
 public:
  Adam(std::vector<nn::ParamRef<T>> params, AdamConfig config);

  void step();
  void set_lr(double lr) noexcept { config_.lr = lr; }
  double lr() const noexcept { return config_.lr; }
  std::int64_t steps() const noexcept { return t_; }

 private:
  std::vector<nn::ParamRef<T>> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// Learning rate multiplied by gamma at each milestone epoch (0-based).
struct MultiStep {
  double base = 0.001;
  std::vector<int> milestones;
  double gamma = 0.1;

  double at(int epoch) const;
};

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct EdgeSample {
  /// [1, 3, H, W] in [0, 1].
  Tensor image;
  /// [1, 1, H, W] annotator consensus in {0, 0.25, 0.5, 0.75, 1}.
  Tensor gt;
};

/// Anti-aliased ellipses and polygons over a shaded background with additive
/// noise. Boundaries are two pixels wide and carry the agreement of four
/// simulated annotators. Deterministic per seed.
std::vector<EdgeSample> synth_edge_dataset(std::uint64_t seed, int count, int size);

struct ClassSample {
  Tensor images;  // [count, 3, S, S] in [0, 1]
  std::vector<int> labels;
  int classes = 10;
};

/// Ten parametric shape classes (disk, square, triangle, plus, ring, star,
/// bar, frame, half-disk, two dots) with random pose, colour and background.
/// Labels cycle through the classes and are then shuffled.
ClassSample synth_cls_dataset(std::uint64_t seed, int count, int size, int classes = 10);

const std::vector<std::string>& shape_class_names();

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct HistoryRow {
  int epoch = 0;
  std::int64_t step = 0;
  double loss = 0;
  double metric = 0;
  double lr = 0;
};

struct History {
  std::vector<HistoryRow> rows;

  /// "epoch,step,loss,metric,lr" with a header line.
  std::string csv() const;
  void write_csv(const std::string& path) const;
};

struct EdgeTrainConfig {
  int epochs = 10;
  int batch = 8;
  double lr = 0.005;
  std::vector<int> milestones{10, 16};
  double gamma = 0.1;
  LossParams loss;
  std::uint64_t seed = 1;
  /// Called after every history row.
  std::function<void(const HistoryRow&)> on_row;
};

struct ClassTrainConfig {
  int epochs = 10;
  int batch = 64;
  double lr = 0.001;
  std::vector<int> milestones{45, 55};
  double gamma = 0.1;
  std::uint64_t seed = 1;
  std::function<void(const HistoryRow&)> on_row;
};

/// Row 0 holds the untrained training loss and validation F1; row e the mean
/// per-image training loss of epoch e and the validation F1 afterwards.
/// Throws NumericError naming the first non-finite tensor.
History train_edge(nn::PiDiNet<float>& net, std::span<const EdgeSample> train, std::span<const EdgeSample> val,
                   const EdgeTrainConfig& config);

/// Same layout with mean cross-entropy and test accuracy.
History train_classifier(nn::Sequential<float>& net, const ClassSample& train, const ClassSample& test,
                         const ClassTrainConfig& config);

/// Mean per-image edge loss over the five maps.
double evaluate_edge_loss(nn::PiDiNet<float>& net, std::span<const EdgeSample> data, const LossParams& params,
                          int batch = 8);

/// Pixel-wise F1 of the fused map thresholded at `threshold` against y ≥ η;
/// pixels with 0 < y < η are ignored.
double edge_f1(nn::PiDiNet<float>& net, std::span<const EdgeSample> data, double eta = 0.3, double threshold = 0.5,
               int batch = 8);

/// F1 of fused maps already computed, one [1, 1, H, W] map per sample.
double edge_f1(std::span<const Tensor> fused, std::span<const EdgeSample> data, double eta = 0.3,
               double threshold = 0.5);

double classification_accuracy(nn::Sequential<float>& net, const ClassSample& data, int batch = 128);

/// Batches the samples listed in `order`.
Tensor stack_images(std::span<const EdgeSample> data, std::span<const std::size_t> order);
Tensor stack_gts(std::span<const EdgeSample> data, std::span<const std::size_t> order);

}  // namespace pidi::train
