#pragma once

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pidi/binary.hpp"
#include "pidi/cost.hpp"
#include "pidi/ops.hpp"
#include "pidi/pdc.hpp"
#include "pidi/tensor.hpp"

namespace pidi::nn {

/// View of one named tensor owned by a module. Buffers (running statistics)
/// have no gradient.
template <typename T>
struct ParamRef {
  std::string name;
  BasicTensor<T>* value = nullptr;
  BasicTensor<T>* grad = nullptr;
  /// Latent weight that is binarized on the forward pass.
  bool binary = false;
};

/// A differentiable layer. forward caches what backward needs; backward
/// accumulates into parameter gradients and returns the input gradient.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;

  virtual BasicTensor<T> forward(const BasicTensor<T>& x) = 0;
  virtual BasicTensor<T> backward(const BasicTensor<T>& grad_out) = 0;

  virtual void collect(const std::string& prefix, std::vector<ParamRef<T>>& out);
  /// Adds this layer's cost at input shape `in` and returns the output shape.
  virtual Shape cost(const Shape& in, analysis::CostReport& report) const;
  virtual void set_training(bool on) { training_ = on; }
  virtual std::string kind() const = 0;

  bool training() const noexcept { return training_; }

 protected:
  bool training_ = true;
};

template <typename T>
using ModulePtr = std::unique_ptr<Module<T>>;

std::string join_name(const std::string& prefix, const std::string& name);

template <typename T>
std::vector<ParamRef<T>> parameters(Module<T>& m, const std::string& prefix = "");

template <typename T>
void zero_grad(Module<T>& m);

/// He-normal initialization, std = sqrt(2 / fan_in).
template <typename T>
BasicTensor<T> kaiming_normal(Shape shape, int fan_in, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Full-precision layers
// ---------------------------------------------------------------------------

template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(int in_channels, int out_channels, ConvSpec spec, bool bias, std::mt19937_64& rng);
  /// Wraps existing weights; bias may be empty.
  Conv2d(BasicTensor<T> weight, BasicTensor<T> bias, ConvSpec spec);

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  std::string kind() const override { return "conv"; }

  const ConvSpec& spec() const noexcept { return spec_; }
  BasicTensor<T>& weight() noexcept { return weight_; }
  const BasicTensor<T>& weight() const noexcept { return weight_; }
  BasicTensor<T>& bias() noexcept { return bias_; }
  const BasicTensor<T>& bias() const noexcept { return bias_; }

 private:
  ConvSpec spec_;
  BasicTensor<T> weight_, grad_weight_;
  BasicTensor<T> bias_, grad_bias_;
  BasicTensor<T> input_;
};

/// Pixel difference convolution with per-pair weights [O, I/g, m, 1]. Runs as a
/// vanilla convolution with the re-parameterized kernel, or pair by pair.
template <typename T>
class PdcConv : public Module<T> {
 public:
  PdcConv(pdc::Kind kind, int in_channels, int out_channels, int stride, int groups, std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  std::string kind() const override;

  void use_pairs_path(bool on) noexcept { pairs_path_ = on; }
  pdc::Kind pdc_kind() const noexcept { return pattern_.kind; }
  const pdc::ProbePattern& pattern() const noexcept { return pattern_; }
  const ConvSpec& spec() const noexcept { return spec_; }
  BasicTensor<T>& weight() noexcept { return weight_; }
  const BasicTensor<T>& weight() const noexcept { return weight_; }

  /// Equivalent vanilla convolution holding only the re-parameterized kernel.
  std::unique_ptr<Conv2d<T>> to_conv() const;

 private:
  pdc::ProbePattern pattern_;
  ConvSpec spec_;
  bool pairs_path_ = false;
  BasicTensor<T> weight_, grad_weight_;
  BasicTensor<T> input_, kernel_;
};

template <typename T>
class ReLU : public Module<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape cost(const Shape& in, analysis::CostReport&) const override { return in; }
  std::string kind() const override { return "relu"; }

 private:
  BasicTensor<T> input_;
};

template <typename T>
class Sigmoid : public Module<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape cost(const Shape& in, analysis::CostReport&) const override { return in; }
  std::string kind() const override { return "sigmoid"; }

 private:
  BasicTensor<T> output_;
};

template <typename T>
class PReLU : public Module<T> {
 public:
  explicit PReLU(int channels, T init = T(0.25));

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  std::string kind() const override { return "prelu"; }

  BasicTensor<T> infer(const BasicTensor<T>& x) const;

 private:
  BasicTensor<T> slope_, grad_slope_;
  BasicTensor<T> input_;
};

template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(int channels, T momentum = T(0.1), T eps = T(1e-5));

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  std::string kind() const override { return "batchnorm"; }

  /// Normalizes with the running statistics without touching any cache.
  BasicTensor<T> infer(const BasicTensor<T>& x) const;

 private:
  T momentum_, eps_;
  BasicTensor<T> gamma_, beta_, grad_gamma_, grad_beta_;
  BasicTensor<T> running_mean_, running_var_;
  BatchNormCache<T> cache_;
  bool cached_training_ = true;
};

template <typename T>
class Pool2x2 : public Module<T> {
 public:
  explicit Pool2x2(PoolMode mode) : mode_(mode) {}

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  std::string kind() const override { return mode_ == PoolMode::max ? "maxpool2" : "avgpool2"; }

 private:
  PoolMode mode_;
  Shape in_shape_{};
  std::vector<std::uint32_t> argmax_;
};

template <typename T>
class MaxPool : public Module<T> {
 public:
  MaxPool(int kernel, int stride, int padding) : kernel_(kernel), stride_(stride), padding_(padding) {}

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  std::string kind() const override { return "maxpool"; }

 private:
  int kernel_, stride_, padding_;
  Shape in_shape_{};
  std::vector<std::uint32_t> argmax_;
};

template <typename T>
class GlobalAvgPool : public Module<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  std::string kind() const override { return "gap"; }

 private:
  Shape in_shape_{};
};

/// Fully connected layer. A classifier head is excluded from cost reports.
template <typename T>
class Linear : public Module<T> {
 public:
  Linear(int in_features, int out_features, std::mt19937_64& rng, bool classifier = true);

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  std::string kind() const override { return "linear"; }

 private:
  bool classifier_;
  BasicTensor<T> weight_, grad_weight_, bias_, grad_bias_;
  BasicTensor<T> input_;
};

/// Named chain of modules.
template <typename T>
class Sequential : public Module<T> {
 public:
  Sequential& add(std::string name, ModulePtr<T> module);

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  void set_training(bool on) override;
  std::string kind() const override { return "sequential"; }

  /// Output of the child named `tap`, running only the children up to it.
  BasicTensor<T> features(const BasicTensor<T>& x, const std::string& tap);

  std::size_t size() const noexcept { return children_.size(); }
  Module<T>& child(std::size_t i) { return *children_[i].second; }
  const std::string& child_name(std::size_t i) const { return children_[i].first; }

 private:
  std::vector<std::pair<std::string, ModulePtr<T>>> children_;
};

/// body(x) + shortcut(x); an empty shortcut is the identity.
template <typename T>
class Residual : public Module<T> {
 public:
  Residual(ModulePtr<T> body, ModulePtr<T> shortcut);

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  void set_training(bool on) override;
  std::string kind() const override { return "residual"; }

  Module<T>& body() { return *body_; }

 private:
  ModulePtr<T> body_;
  ModulePtr<T> shortcut_;
};

// ---------------------------------------------------------------------------
// Binary layers
// ---------------------------------------------------------------------------

/// Vanilla binary convolution: Sign(x − τ) ⊛ Sign(w) with latent weights and STE.
template <typename T>
class BinaryConv2d : public Module<T> {
 public:
  BinaryConv2d(int in_channels, int out_channels, bnn::BinaryConvSpec spec, std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  std::string kind() const override { return "bconv"; }

  /// Inference through XNOR-popcount on packed bits (float only).
  BasicTensor<T> forward_packed(const BasicTensor<T>& x) const;

  const bnn::BinaryConvSpec& spec() const noexcept { return spec_; }
  BasicTensor<T>& weight() noexcept { return weight_; }

 private:
  bnn::BinaryConvSpec spec_;
  BasicTensor<T> weight_, grad_weight_;
  BasicTensor<T> input_, padded_signs_, weight_signs_, unscaled_;
};

/// Binary PDC: Sign(x_s − x_r) per pair, binary inner product with Sign(w).
/// Latent weights are [O, I, m, 1].
template <typename T>
class BiPdcConv : public Module<T> {
 public:
  BiPdcConv(pdc::Kind kind, int in_channels, int out_channels, bnn::BinaryConvSpec spec, std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  std::string kind() const override;

  BasicTensor<T> forward_packed(const BasicTensor<T>& x) const;

  const pdc::ProbePattern& pattern() const noexcept { return pattern_; }
  BasicTensor<T>& weight() noexcept { return weight_; }

 private:
  pdc::ProbePattern pattern_;
  bnn::BinaryConvSpec spec_;
  BasicTensor<T> weight_, grad_weight_;
  Shape in_shape_{};
  BasicTensor<T> diff_, bits_, weight_signs_, unscaled_;
};

/// Channel-split layer: the first round(ξ·C) channels go through Bi-PDC, the
/// rest through a vanilla binary convolution; each branch has its own BN and
/// PReLU and the two results are summed. ξ = 0 leaves only the BConv branch.
template <typename T>
class HybridLayer : public Module<T> {
 public:
  HybridLayer(int in_channels, int out_channels, double xi, pdc::Kind kind, int stride, bnn::BinaryConvSpec base,
              std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  Shape cost(const Shape& in, analysis::CostReport& report) const override;
  void set_training(bool on) override;
  std::string kind() const override { return "hybrid"; }

  /// Eval-mode inference with both binary branches on packed bits.
  BasicTensor<T> forward_packed(const BasicTensor<T>& x) const;

  int split() const noexcept { return split_; }
  BiPdcConv<T>* pdc_branch() noexcept { return pdc_.get(); }
  BinaryConv2d<T>* conv_branch() noexcept { return conv_.get(); }

 private:
  int in_channels_;
  int split_;
  std::unique_ptr<BiPdcConv<T>> pdc_;
  std::unique_ptr<BatchNorm2d<T>> pdc_bn_;
  std::unique_ptr<PReLU<T>> pdc_act_;
  std::unique_ptr<BinaryConv2d<T>> conv_;
  std::unique_ptr<BatchNorm2d<T>> conv_bn_;
  std::unique_ptr<PReLU<T>> conv_act_;
};

}  // namespace pidi::nn
