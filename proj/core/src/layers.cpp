#include "pidi/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <type_traits>

namespace pidi::nn {
namespace {

template <typename T>
std::span<const T> as_span(const BasicTensor<T>& t) {
  return t.values();
}

template <typename T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  add_inplace(dst, src);
}

template <typename T>
void accumulate(BasicTensor<T>& dst, const std::vector<T>& src) {
  T* d = dst.data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += src[i];
}

std::int64_t conv_macs(const Shape& in, const Shape& weight, const ConvSpec& spec) {
  const Shape out = conv2d_output_shape(in, weight, spec);
  return static_cast<std::int64_t>(out.numel()) * weight.c * weight.h * weight.w;
}

// Per-output-channel mean |w| over the remaining dimensions.
template <typename T>
std::vector<T> mean_abs_per_output(const BasicTensor<T>& w) {
  const std::size_t per = w.size() / static_cast<std::size_t>(w.n());
  std::vector<T> a(w.n());
  for (int o = 0; o < w.n(); ++o) {
    T s = 0;
    const T* p = w.data() + static_cast<std::size_t>(o) * per;
    for (std::size_t i = 0; i < per; ++i) s += std::abs(p[i]);
    a[o] = s / static_cast<T>(per);
  }
  return a;
}

template <typename T>
BasicTensor<T> scale_channels(const BasicTensor<T>& x, const std::vector<T>& a) {
  BasicTensor<T> y = x;
  const std::size_t p = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      T* d = y.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) d[i] *= a[c];
    }
  }
  return y;
}

// Gradient of the latent weights through Sign (clipped STE) and, when scaling
// is enabled, through the mean-|w| factor.
template <typename T>
BasicTensor<T> latent_weight_grad(const BasicTensor<T>& grad_signs, const BasicTensor<T>& latent,
                                  const bnn::BinaryConvSpec& spec, const BasicTensor<T>& grad_out,
                                  const BasicTensor<T>& unscaled) {
  BasicTensor<T> g = bnn::ste_backward(grad_signs, latent, static_cast<T>(spec.ste_clip));
  if (spec.scale == bnn::ScaleMode::per_channel_mean_abs) {
    const std::size_t p = grad_out.shape().plane();
    const std::size_t per = latent.size() / static_cast<std::size_t>(latent.n());
    for (int o = 0; o < latent.n(); ++o) {
      T ga = 0;
      for (int n = 0; n < grad_out.n(); ++n) {
        const T* go = grad_out.plane(n, o);
        const T* z = unscaled.plane(n, o);
        for (std::size_t i = 0; i < p; ++i) ga += go[i] * z[i];
      }
      const T* w = latent.data() + static_cast<std::size_t>(o) * per;
      T* gw = g.data() + static_cast<std::size_t>(o) * per;
      for (std::size_t i = 0; i < per; ++i) gw[i] += ga * bnn::sign_value(w[i]) / static_cast<T>(per);
    }
  }
  return g;
}

}  // namespace

std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <typename T>
void Module<T>::collect(const std::string&, std::vector<ParamRef<T>>&) {}

template <typename T>
Shape Module<T>::cost(const Shape&, analysis::CostReport&) const {
  throw analysis::UnsupportedLayer(kind());
}

template <typename T>
std::vector<ParamRef<T>> parameters(Module<T>& m, const std::string& prefix) {
  std::vector<ParamRef<T>> out;
  m.collect(prefix, out);
  return out;
}

template <typename T>
void zero_grad(Module<T>& m) {
  for (auto& p : parameters(m)) {
    if (p.grad) std::fill(p.grad->values().begin(), p.grad->values().end(), T{0});
  }
}

template <typename T>
BasicTensor<T> kaiming_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
  const T stddev = static_cast<T>(std::sqrt(2.0 / std::max(1, fan_in)));
  return random_normal<T>(shape, T{0}, stddev, rng);
}

// Uniform in ±1/sqrt(fan_in).
template <typename T>
BasicTensor<T> fan_in_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in))));
  return random_uniform<T>(shape, -bound, bound, rng);
}

// --- Conv2d ---------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, ConvSpec spec, bool bias, std::mt19937_64& rng) : spec_(spec) {
  spec_.validate();
  if (in_channels % spec.groups != 0 || out_channels % spec.groups != 0) {
    throw ShapeError("Conv2d: channels " + std::to_string(in_channels) + "→" + std::to_string(out_channels) +
                     " not divisible by groups " + std::to_string(spec.groups));
  }
  const int per_group = in_channels / spec.groups;
  weight_ = fan_in_uniform<T>({out_channels, per_group, spec.kernel, spec.kernel}, per_group * spec.kernel * spec.kernel,
                              rng);
  grad_weight_ = BasicTensor<T>(weight_.shape());
  if (bias) {
    bias_ = BasicTensor<T>({1, out_channels, 1, 1});
    grad_bias_ = BasicTensor<T>(bias_.shape());
  }
}

template <typename T>
Conv2d<T>::Conv2d(BasicTensor<T> weight, BasicTensor<T> bias, ConvSpec spec)
    : spec_(spec), weight_(std::move(weight)), bias_(std::move(bias)) {
  spec_.validate();
  grad_weight_ = BasicTensor<T>(weight_.shape());
  if (!bias_.empty()) {
    if (bias_.size() != static_cast<std::size_t>(weight_.n())) throw ShapeError("Conv2d: bias length mismatch");
    bias_ = bias_.reshaped({1, weight_.n(), 1, 1});
    grad_bias_ = BasicTensor<T>(bias_.shape());
  }
}

template <typename T>
BasicTensor<T> Conv2d<T>::forward(const BasicTensor<T>& x) {
  if (this->training_) input_ = x;
  BasicTensor<T> y = conv2d(x, weight_, spec_);
  if (!bias_.empty()) add_channel_bias(y, as_span(bias_));
  return y;
}

template <typename T>
BasicTensor<T> Conv2d<T>::backward(const BasicTensor<T>& grad_out) {
  ConvGrads<T> g = conv2d_backward(grad_out, input_, weight_, spec_);
  add_inplace(grad_weight_, g.weight);
  if (!bias_.empty()) accumulate(grad_bias_, channel_sum(grad_out));
  return std::move(g.input);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &grad_weight_, false});
  if (!bias_.empty()) out.push_back({join_name(prefix, "bias"), &bias_, &grad_bias_, false});
}

template <typename T>
Shape Conv2d<T>::cost(const Shape& in, analysis::CostReport& report) const {
  report.flops += conv_macs(in, weight_.shape(), spec_);
  report.fp_params += static_cast<std::int64_t>(weight_.size() + bias_.size());
  return conv2d_output_shape(in, weight_.shape(), spec_);
}

// --- PdcConv --------------------------------------------------------------

template <typename T>
PdcConv<T>::PdcConv(pdc::Kind kind, int in_channels, int out_channels, int stride, int groups, std::mt19937_64& rng)
    : pattern_(pdc::probe_pattern(kind)),
      spec_{pattern_.window, stride, pdc::same_padding(kind), 1, groups} {
  spec_.validate();
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ShapeError("PdcConv: channels not divisible by groups " + std::to_string(groups));
  }
  const int per_group = in_channels / groups;
  weight_ = fan_in_uniform<T>({out_channels, per_group, pattern_.size(), 1}, per_group * pattern_.size(), rng);
  grad_weight_ = BasicTensor<T>(weight_.shape());
}

template <typename T>
std::string PdcConv<T>::kind() const {
  return std::string("pdc_") + pdc::kind_letter(pattern_.kind);
}

template <typename T>
BasicTensor<T> PdcConv<T>::forward(const BasicTensor<T>& x) {
  if (this->training_) input_ = x;
  if (pairs_path_) return pdc::pdc_forward_pairs(x, weight_, pattern_, spec_);
  kernel_ = pdc::reparameterize(weight_, pattern_);
  return conv2d(x, kernel_, spec_);
}

template <typename T>
BasicTensor<T> PdcConv<T>::backward(const BasicTensor<T>& grad_out) {
  if (pairs_path_) {
    ConvGrads<T> g = pdc::pdc_backward_pairs(grad_out, input_, weight_, pattern_, spec_);
    add_inplace(grad_weight_, g.weight);
    return std::move(g.input);
  }
  ConvGrads<T> g = conv2d_backward(grad_out, input_, kernel_, spec_);
  add_inplace(grad_weight_, pdc::reparameterize_backward(g.weight, pattern_));
  return std::move(g.input);
}

template <typename T>
void PdcConv<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &grad_weight_, false});
}

template <typename T>
Shape PdcConv<T>::cost(const Shape& in, analysis::CostReport& report) const {
  const Shape kshape{weight_.n(), weight_.c(), pattern_.window, pattern_.window};
  report.flops += conv_macs(in, kshape, spec_);
  report.fp_params += static_cast<std::int64_t>(weight_.size());
  return conv2d_output_shape(in, kshape, spec_);
}

template <typename T>
std::unique_ptr<Conv2d<T>> PdcConv<T>::to_conv() const {
  return std::make_unique<Conv2d<T>>(pdc::reparameterize(weight_, pattern_), BasicTensor<T>(), spec_);
}

// --- Activations ----------------------------------------------------------

template <typename T>
BasicTensor<T> ReLU<T>::forward(const BasicTensor<T>& x) {
  if (this->training_) input_ = x;
  return relu(x);
}

template <typename T>
BasicTensor<T> ReLU<T>::backward(const BasicTensor<T>& grad_out) {
  return relu_backward(grad_out, input_);
}

template <typename T>
BasicTensor<T> Sigmoid<T>::forward(const BasicTensor<T>& x) {
  BasicTensor<T> y = sigmoid(x);
  if (this->training_) output_ = y;
  return y;
}

template <typename T>
BasicTensor<T> Sigmoid<T>::backward(const BasicTensor<T>& grad_out) {
  return sigmoid_backward(grad_out, output_);
}

template <typename T>
PReLU<T>::PReLU(int channels, T init) : slope_({1, channels, 1, 1}, init), grad_slope_({1, channels, 1, 1}) {}

template <typename T>
BasicTensor<T> PReLU<T>::forward(const BasicTensor<T>& x) {
  if (this->training_) input_ = x;
  return prelu(x, as_span(slope_));
}

template <typename T>
BasicTensor<T> PReLU<T>::infer(const BasicTensor<T>& x) const {
  return prelu(x, as_span(slope_));
}

template <typename T>
BasicTensor<T> PReLU<T>::backward(const BasicTensor<T>& grad_out) {
  PReluGrads<T> g = prelu_backward(grad_out, input_, as_span(slope_));
  accumulate(grad_slope_, g.slopes);
  return std::move(g.input);
}

template <typename T>
void PReLU<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({join_name(prefix, "slope"), &slope_, &grad_slope_, false});
}

template <typename T>
Shape PReLU<T>::cost(const Shape& in, analysis::CostReport& report) const {
  report.fp_params += static_cast<std::int64_t>(slope_.size());
  return in;
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, T momentum, T eps)
    : momentum_(momentum),
      eps_(eps),
      gamma_({1, channels, 1, 1}, T{1}),
      beta_({1, channels, 1, 1}),
      grad_gamma_({1, channels, 1, 1}),
      grad_beta_({1, channels, 1, 1}),
      running_mean_({1, channels, 1, 1}),
      running_var_({1, channels, 1, 1}, T{1}) {}

template <typename T>
BasicTensor<T> BatchNorm2d<T>::forward(const BasicTensor<T>& x) {
  cached_training_ = this->training_;
  if (this->training_) {
    return batch_norm_train(x, as_span(gamma_), as_span(beta_), running_mean_.values(), running_var_.values(),
                            momentum_, eps_, cache_);
  }
  return infer(x);
}

template <typename T>
BasicTensor<T> BatchNorm2d<T>::infer(const BasicTensor<T>& x) const {
  return batch_norm_eval(x, as_span(gamma_), as_span(beta_), as_span(running_mean_), as_span(running_var_), eps_);
}

template <typename T>
BasicTensor<T> BatchNorm2d<T>::backward(const BasicTensor<T>& grad_out) {
  if (!cached_training_) {
    // Eval mode is an affine map per channel.
    BasicTensor<T> g(grad_out.shape());
    const std::size_t p = grad_out.shape().plane();
    for (int c = 0; c < grad_out.c(); ++c) {
      const T s = gamma_.data()[c] / std::sqrt(running_var_.data()[c] + eps_);
      for (int n = 0; n < grad_out.n(); ++n) {
        const T* go = grad_out.plane(n, c);
        T* gi = g.plane(n, c);
        for (std::size_t i = 0; i < p; ++i) gi[i] = go[i] * s;
      }
    }
    return g;
  }
  BatchNormGrads<T> g = batch_norm_backward(grad_out, as_span(gamma_), cache_);
  accumulate(grad_gamma_, g.gamma);
  accumulate(grad_beta_, g.beta);
  return std::move(g.input);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({join_name(prefix, "gamma"), &gamma_, &grad_gamma_, false});
  out.push_back({join_name(prefix, "beta"), &beta_, &grad_beta_, false});
  out.push_back({join_name(prefix, "running_mean"), &running_mean_, nullptr, false});
  out.push_back({join_name(prefix, "running_var"), &running_var_, nullptr, false});
}

template <typename T>
Shape BatchNorm2d<T>::cost(const Shape& in, analysis::CostReport& report) const {
  report.fp_params += static_cast<std::int64_t>(gamma_.size() + beta_.size());
  return in;
}

// --- Pooling --------------------------------------------------------------

template <typename T>
BasicTensor<T> Pool2x2<T>::forward(const BasicTensor<T>& x) {
  in_shape_ = x.shape();
  PoolResult<T> r = pool2x2(x, mode_);
  argmax_ = std::move(r.argmax);
  return std::move(r.output);
}

template <typename T>
BasicTensor<T> Pool2x2<T>::backward(const BasicTensor<T>& grad_out) {
  return pool2x2_backward(grad_out, in_shape_, mode_, std::span<const std::uint32_t>(argmax_));
}

template <typename T>
Shape Pool2x2<T>::cost(const Shape& in, analysis::CostReport&) const {
  return {in.n, in.c, in.h / 2, in.w / 2};
}

template <typename T>
BasicTensor<T> MaxPool<T>::forward(const BasicTensor<T>& x) {
  in_shape_ = x.shape();
  PoolResult<T> r = max_pool(x, kernel_, stride_, padding_);
  argmax_ = std::move(r.argmax);
  return std::move(r.output);
}

template <typename T>
BasicTensor<T> MaxPool<T>::backward(const BasicTensor<T>& grad_out) {
  return max_pool_backward(grad_out, in_shape_, std::span<const std::uint32_t>(argmax_));
}

template <typename T>
Shape MaxPool<T>::cost(const Shape& in, analysis::CostReport&) const {
  return {in.n, in.c, (in.h + 2 * padding_ - kernel_) / stride_ + 1, (in.w + 2 * padding_ - kernel_) / stride_ + 1};
}

template <typename T>
BasicTensor<T> GlobalAvgPool<T>::forward(const BasicTensor<T>& x) {
  in_shape_ = x.shape();
  return global_avg_pool(x);
}

template <typename T>
BasicTensor<T> GlobalAvgPool<T>::backward(const BasicTensor<T>& grad_out) {
  return global_avg_pool_backward(grad_out, in_shape_);
}

template <typename T>
Shape GlobalAvgPool<T>::cost(const Shape& in, analysis::CostReport&) const {
  return {in.n, in.c, 1, 1};
}

// --- Linear ---------------------------------------------------------------

template <typename T>
Linear<T>::Linear(int in_features, int out_features, std::mt19937_64& rng, bool classifier)
    : classifier_(classifier),
      weight_(random_normal<T>({out_features, in_features, 1, 1}, T{0},
                               static_cast<T>(std::sqrt(1.0 / std::max(1, in_features))), rng)),
      grad_weight_({out_features, in_features, 1, 1}),
      bias_({1, out_features, 1, 1}),
      grad_bias_({1, out_features, 1, 1}) {}

template <typename T>
BasicTensor<T> Linear<T>::forward(const BasicTensor<T>& x) {
  if (this->training_) input_ = x;
  return linear(x, weight_, as_span(bias_));
}

template <typename T>
BasicTensor<T> Linear<T>::backward(const BasicTensor<T>& grad_out) {
  LinearGrads<T> g = linear_backward(grad_out, input_, weight_);
  add_inplace(grad_weight_, g.weight);
  accumulate(grad_bias_, g.bias);
  return std::move(g.input);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &grad_weight_, false});
  out.push_back({join_name(prefix, "bias"), &bias_, &grad_bias_, false});
}

template <typename T>
Shape Linear<T>::cost(const Shape& in, analysis::CostReport& report) const {
  if (!classifier_) {
    report.flops += static_cast<std::int64_t>(in.n) * weight_.n() * weight_.c();
    report.fp_params += static_cast<std::int64_t>(weight_.size() + bias_.size());
  }
  return {in.n, weight_.n(), 1, 1};
}

// --- Containers -----------------------------------------------------------

template <typename T>
Sequential<T>& Sequential<T>::add(std::string name, ModulePtr<T> module) {
  module->set_training(this->training_);
  children_.emplace_back(std::move(name), std::move(module));
  return *this;
}

template <typename T>
BasicTensor<T> Sequential<T>::forward(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  for (auto& [name, m] : children_) y = m->forward(y);
  return y;
}

template <typename T>
BasicTensor<T> Sequential<T>::backward(const BasicTensor<T>& grad_out) {
  BasicTensor<T> g = grad_out;
  for (auto it = children_.rbegin(); it != children_.rend(); ++it) g = it->second->backward(g);
  return g;
}

template <typename T>
void Sequential<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  for (auto& [name, m] : children_) m->collect(join_name(prefix, name), out);
}

template <typename T>
Shape Sequential<T>::cost(const Shape& in, analysis::CostReport& report) const {
  Shape s = in;
  for (const auto& [name, m] : children_) s = m->cost(s, report);
  return s;
}

template <typename T>
void Sequential<T>::set_training(bool on) {
  this->training_ = on;
  for (auto& [name, m] : children_) m->set_training(on);
}

template <typename T>
BasicTensor<T> Sequential<T>::features(const BasicTensor<T>& x, const std::string& tap) {
  BasicTensor<T> y = x;
  for (auto& [name, m] : children_) {
    y = m->forward(y);
    if (name == tap) return y;
  }
  std::string known;
  for (const auto& [name, m] : children_) known += (known.empty() ? "" : ", ") + name;
  throw std::invalid_argument("unknown feature tap '" + tap + "' (available: " + known + ")");
}

template <typename T>
Residual<T>::Residual(ModulePtr<T> body, ModulePtr<T> shortcut) : body_(std::move(body)), shortcut_(std::move(shortcut)) {}

template <typename T>
BasicTensor<T> Residual<T>::forward(const BasicTensor<T>& x) {
  BasicTensor<T> y = body_->forward(x);
  if (shortcut_) {
    add_inplace(y, shortcut_->forward(x));
  } else {
    add_inplace(y, x);
  }
  return y;
}

template <typename T>
BasicTensor<T> Residual<T>::backward(const BasicTensor<T>& grad_out) {
  BasicTensor<T> g = body_->backward(grad_out);
  if (shortcut_) {
    add_inplace(g, shortcut_->backward(grad_out));
  } else {
    add_inplace(g, grad_out);
  }
  return g;
}

template <typename T>
void Residual<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  body_->collect(join_name(prefix, "body"), out);
  if (shortcut_) shortcut_->collect(join_name(prefix, "shortcut"), out);
}

template <typename T>
Shape Residual<T>::cost(const Shape& in, analysis::CostReport& report) const {
  const Shape out = body_->cost(in, report);
  if (shortcut_) {
    const Shape s = shortcut_->cost(in, report);
    if (s != out) throw ShapeError("Residual: shortcut " + s.str() + " does not match body " + out.str());
  } else if (in != out) {
    throw ShapeError("Residual: identity shortcut " + in.str() + " does not match body " + out.str());
  }
  return out;
}

template <typename T>
void Residual<T>::set_training(bool on) {
  this->training_ = on;
  body_->set_training(on);
  if (shortcut_) shortcut_->set_training(on);
}

// --- BinaryConv2d ---------------------------------------------------------

template <typename T>
BinaryConv2d<T>::BinaryConv2d(int in_channels, int out_channels, bnn::BinaryConvSpec spec, std::mt19937_64& rng)
    : spec_(spec) {
  spec_.validate();
  if (spec_.conv.groups != 1) throw ShapeError("BinaryConv2d: groups must be 1");
  const int k = spec_.conv.kernel;
  weight_ = kaiming_normal<T>({out_channels, in_channels, k, k}, in_channels * k * k, rng);
  grad_weight_ = BasicTensor<T>(weight_.shape());
}

template <typename T>
BasicTensor<T> BinaryConv2d<T>::forward(const BasicTensor<T>& x) {
  const T tau = static_cast<T>(spec_.tau);
  conv2d_output_shape(x.shape(), weight_.shape(), spec_.conv);
  BasicTensor<T> padded = pad_constant(bnn::sign(x, tau), spec_.conv.padding, bnn::sign_value(T{0}, tau));
  BasicTensor<T> wsign = bnn::sign(weight_);
  ConvSpec inner = spec_.conv;
  inner.padding = 0;
  BasicTensor<T> z = conv2d(padded, wsign, inner);
  BasicTensor<T> y = spec_.scale == bnn::ScaleMode::none ? z : scale_channels(z, mean_abs_per_output(weight_));
  if (this->training_) {
    input_ = x;
    padded_signs_ = std::move(padded);
    weight_signs_ = std::move(wsign);
    unscaled_ = std::move(z);
  }
  return y;
}

template <typename T>
BasicTensor<T> BinaryConv2d<T>::backward(const BasicTensor<T>& grad_out) {
  ConvSpec inner = spec_.conv;
  inner.padding = 0;
  const bool scaled = spec_.scale != bnn::ScaleMode::none;
  const BasicTensor<T> gz = scaled ? scale_channels(grad_out, mean_abs_per_output(weight_)) : grad_out;
  ConvGrads<T> g = conv2d_backward(gz, padded_signs_, weight_signs_, inner);
  add_inplace(grad_weight_, latent_weight_grad(g.weight, weight_, spec_, grad_out, unscaled_));
  BasicTensor<T> gx = crop(g.input, spec_.conv.padding);
  BasicTensor<T> pre = input_;
  const T tau = static_cast<T>(spec_.tau);
  for (auto& v : pre.values()) v -= tau;
  return bnn::ste_backward(gx, pre, static_cast<T>(spec_.ste_clip));
}

template <typename T>
BasicTensor<T> BinaryConv2d<T>::forward_packed(const BasicTensor<T>& x) const {
  if constexpr (std::is_same_v<T, float>) {
    const bnn::BitTensor xb = bnn::BitTensor::pack(x, spec_.tau);
    const bnn::BitTensor wb = bnn::BitTensor::pack(weight_, 0.0f);
    Tensor z = bnn::bconv(xb, wb, spec_);
    return spec_.scale == bnn::ScaleMode::none ? z : scale_channels(z, mean_abs_per_output(weight_));
  } else {
    throw std::logic_error("packed inference is only available for float tensors");
  }
}

template <typename T>
void BinaryConv2d<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &grad_weight_, true});
}

template <typename T>
Shape BinaryConv2d<T>::cost(const Shape& in, analysis::CostReport& report) const {
  const Shape out = conv2d_output_shape(in, weight_.shape(), spec_.conv);
  report.bops += conv_macs(in, weight_.shape(), spec_.conv);
  report.b_params += static_cast<std::int64_t>(weight_.size());
  if (spec_.scale != bnn::ScaleMode::none) {
    report.flops += static_cast<std::int64_t>(out.numel());
    report.fp_params += weight_.n();
  }
  return out;
}

// --- BiPdcConv ------------------------------------------------------------

template <typename T>
BiPdcConv<T>::BiPdcConv(pdc::Kind kind, int in_channels, int out_channels, bnn::BinaryConvSpec spec,
                        std::mt19937_64& rng)
    : pattern_(pdc::probe_pattern(kind)), spec_(spec) {
  spec_.conv.kernel = pattern_.window;
  spec_.validate();
  if (spec_.conv.groups != 1) throw ShapeError("BiPdcConv: groups must be 1");
  weight_ = kaiming_normal<T>({out_channels, in_channels, pattern_.size(), 1}, in_channels * pattern_.size(), rng);
  grad_weight_ = BasicTensor<T>(weight_.shape());
}

template <typename T>
std::string BiPdcConv<T>::kind() const {
  return std::string("bipdc_") + pdc::kind_letter(pattern_.kind);
}

template <typename T>
BasicTensor<T> BiPdcConv<T>::forward(const BasicTensor<T>& x) {
  if (x.c() != weight_.c()) {
    throw ShapeError("BiPdcConv: expected " + std::to_string(weight_.c()) + " input channels, got " +
                     std::to_string(x.c()));
  }
  BasicTensor<T> diff = pdc::pair_differences(x, pattern_, spec_.conv);
  BasicTensor<T> bits = bnn::sign(diff);
  BasicTensor<T> wsign = bnn::sign(weight_).reshaped({weight_.n(), weight_.c() * pattern_.size(), 1, 1});
  BasicTensor<T> z = conv2d(bits, wsign, ConvSpec{1, 1, 0, 1, 1});
  BasicTensor<T> y = spec_.scale == bnn::ScaleMode::none ? z : scale_channels(z, mean_abs_per_output(weight_));
  if (this->training_) {
    in_shape_ = x.shape();
    diff_ = std::move(diff);
    bits_ = std::move(bits);
    weight_signs_ = std::move(wsign);
    unscaled_ = std::move(z);
  }
  return y;
}

template <typename T>
BasicTensor<T> BiPdcConv<T>::backward(const BasicTensor<T>& grad_out) {
  const bool scaled = spec_.scale != bnn::ScaleMode::none;
  const BasicTensor<T> gz = scaled ? scale_channels(grad_out, mean_abs_per_output(weight_)) : grad_out;
  ConvGrads<T> g = conv2d_backward(gz, bits_, weight_signs_, ConvSpec{1, 1, 0, 1, 1});
  add_inplace(grad_weight_,
              latent_weight_grad(g.weight.reshaped(weight_.shape()), weight_, spec_, grad_out, unscaled_));
  const BasicTensor<T> gdiff = bnn::ste_backward(g.input, diff_, static_cast<T>(spec_.ste_clip));
  return pdc::pair_differences_backward(gdiff, in_shape_, pattern_, spec_.conv);
}

template <typename T>
BasicTensor<T> BiPdcConv<T>::forward_packed(const BasicTensor<T>& x) const {
  if constexpr (std::is_same_v<T, float>) {
    const Tensor wflat = weight_.reshaped({weight_.n(), weight_.c() * pattern_.size(), 1, 1});
    Tensor z = bnn::bipdc(x, bnn::BitTensor::pack(wflat, 0.0f), pattern_, spec_);
    return spec_.scale == bnn::ScaleMode::none ? z : scale_channels(z, mean_abs_per_output(weight_));
  } else {
    throw std::logic_error("packed inference is only available for float tensors");
  }
}

template <typename T>
void BiPdcConv<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &grad_weight_, true});
}

template <typename T>
Shape BiPdcConv<T>::cost(const Shape& in, analysis::CostReport& report) const {
  const int oh = spec_.conv.output_extent(in.h);
  const int ow = spec_.conv.output_extent(in.w);
  if (in.c != weight_.c() || oh < 1 || ow < 1) throw ShapeError("BiPdcConv: cannot cost input " + in.str());
  const std::int64_t locations = static_cast<std::int64_t>(in.n) * oh * ow;
  const std::int64_t bits = static_cast<std::int64_t>(in.c) * pattern_.size();
  report.flops += locations * bits;  // pixel-pair subtractions
  report.bops += locations * bits * weight_.n();
  report.b_params += static_cast<std::int64_t>(weight_.size());
  if (spec_.scale != bnn::ScaleMode::none) {
    report.flops += locations * weight_.n();
    report.fp_params += weight_.n();
  }
  return {in.n, weight_.n(), oh, ow};
}

// --- HybridLayer ----------------------------------------------------------

template <typename T>
HybridLayer<T>::HybridLayer(int in_channels, int out_channels, double xi, pdc::Kind kind, int stride,
                            bnn::BinaryConvSpec base, std::mt19937_64& rng)
    : in_channels_(in_channels), split_(bnn::split_index(xi, in_channels)) {
  if (split_ > 0) {
    bnn::BinaryConvSpec s = base;
    s.conv = ConvSpec{3, stride, pdc::same_padding(kind), 1, 1};
    pdc_ = std::make_unique<BiPdcConv<T>>(kind, split_, out_channels, s, rng);
    pdc_bn_ = std::make_unique<BatchNorm2d<T>>(out_channels);
    pdc_act_ = std::make_unique<PReLU<T>>(out_channels);
  }
  if (split_ < in_channels) {
    bnn::BinaryConvSpec s = base;
    s.conv = ConvSpec{3, stride, 1, 1, 1};
    conv_ = std::make_unique<BinaryConv2d<T>>(in_channels - split_, out_channels, s, rng);
    conv_bn_ = std::make_unique<BatchNorm2d<T>>(out_channels);
    conv_act_ = std::make_unique<PReLU<T>>(out_channels);
  }
}

template <typename T>
BasicTensor<T> HybridLayer<T>::forward(const BasicTensor<T>& x) {
  if (x.c() != in_channels_) {
    throw ShapeError("HybridLayer: expected " + std::to_string(in_channels_) + " channels, got " +
                     std::to_string(x.c()));
  }
  BasicTensor<T> y;
  if (pdc_) {
    const BasicTensor<T> xa = split_ == in_channels_ ? x : slice_channels(x, 0, split_);
    y = pdc_act_->forward(pdc_bn_->forward(pdc_->forward(xa)));
  }
  if (conv_) {
    const BasicTensor<T> xb = split_ == 0 ? x : slice_channels(x, split_, in_channels_);
    BasicTensor<T> yb = conv_act_->forward(conv_bn_->forward(conv_->forward(xb)));
    if (y.empty()) {
      y = std::move(yb);
    } else {
      add_inplace(y, yb);
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> HybridLayer<T>::backward(const BasicTensor<T>& grad_out) {
  BasicTensor<T> ga;
  BasicTensor<T> gb;
  if (pdc_) ga = pdc_->backward(pdc_bn_->backward(pdc_act_->backward(grad_out)));
  if (conv_) gb = conv_->backward(conv_bn_->backward(conv_act_->backward(grad_out)));
  if (!pdc_) return gb;
  if (!conv_) return ga;
  const BasicTensor<T>* parts[2] = {&ga, &gb};
  return concat_channels<T>(std::span<const BasicTensor<T>* const>(parts, 2));
}

template <typename T>
BasicTensor<T> HybridLayer<T>::forward_packed(const BasicTensor<T>& x) const {
  BasicTensor<T> y;
  if (pdc_) {
    const BasicTensor<T> xa = split_ == in_channels_ ? x : slice_channels(x, 0, split_);
    y = pdc_act_->infer(pdc_bn_->infer(pdc_->forward_packed(xa)));
  }
  if (conv_) {
    const BasicTensor<T> xb = split_ == 0 ? x : slice_channels(x, split_, in_channels_);
    BasicTensor<T> yb = conv_act_->infer(conv_bn_->infer(conv_->forward_packed(xb)));
    if (y.empty()) {
      y = std::move(yb);
    } else {
      add_inplace(y, yb);
    }
  }
  return y;
}

template <typename T>
void HybridLayer<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  if (pdc_) {
    pdc_->collect(join_name(prefix, "bipdc"), out);
    pdc_bn_->collect(join_name(prefix, "bipdc_bn"), out);
    pdc_act_->collect(join_name(prefix, "bipdc_act"), out);
  }
  if (conv_) {
    conv_->collect(join_name(prefix, "bconv"), out);
    conv_bn_->collect(join_name(prefix, "bconv_bn"), out);
    conv_act_->collect(join_name(prefix, "bconv_act"), out);
  }
}

template <typename T>
Shape HybridLayer<T>::cost(const Shape& in, analysis::CostReport& report) const {
  if (in.c != in_channels_) throw ShapeError("HybridLayer: cannot cost input " + in.str());
  Shape out{};
  if (pdc_) {
    out = pdc_->cost({in.n, split_, in.h, in.w}, report);
    pdc_bn_->cost(out, report);
    pdc_act_->cost(out, report);
  }
  if (conv_) {
    out = conv_->cost({in.n, in_channels_ - split_, in.h, in.w}, report);
    conv_bn_->cost(out, report);
    conv_act_->cost(out, report);
  }
  return out;
}

template <typename T>
void HybridLayer<T>::set_training(bool on) {
  this->training_ = on;
  for (Module<T>* m : std::initializer_list<Module<T>*>{pdc_.get(), pdc_bn_.get(), pdc_act_.get(), conv_.get(),
                                                        conv_bn_.get(), conv_act_.get()}) {
    if (m) m->set_training(on);
  }
}

#define PIDI_INSTANTIATE_LAYERS(T)                                                       \
  template class Module<T>;                                                              \
  template std::vector<ParamRef<T>> parameters(Module<T>&, const std::string&);          \
  template void zero_grad(Module<T>&);                                                   \
  template BasicTensor<T> kaiming_normal(Shape, int, std::mt19937_64&);                  \
  template class Conv2d<T>;                                                              \
  template class PdcConv<T>;                                                             \
  template class ReLU<T>;                                                                \
  template class Sigmoid<T>;                                                             \
  template class PReLU<T>;                                                               \
  template class BatchNorm2d<T>;                                                         \
  template class Pool2x2<T>;                                                             \
  template class MaxPool<T>;                                                             \
  template class GlobalAvgPool<T>;                                                       \
  template class Linear<T>;                                                              \
  template class Sequential<T>;                                                          \
  template class Residual<T>;                                                            \
  template class BinaryConv2d<T>;                                                        \
  template class BiPdcConv<T>;                                                           \
  template class HybridLayer<T>;

PIDI_INSTANTIATE_LAYERS(float)
PIDI_INSTANTIATE_LAYERS(double)

#undef PIDI_INSTANTIATE_LAYERS

}  // namespace pidi::nn
