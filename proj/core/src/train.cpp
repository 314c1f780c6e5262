#include "pidi/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <tuple>

#include "pidi/parallel.hpp"

namespace pidi::train {
namespace {

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

using Rgb = std::array<double, 3>;

double contrast(const Rgb& a, const Rgb& b) {
  return (std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2])) / 3.0;
}

Rgb random_colour(std::mt19937_64& rng) { return {uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95)}; }

Rgb distinct_colour(std::mt19937_64& rng, const Rgb& from, double min_contrast) {
  Rgb c = random_colour(rng);
  for (int tries = 0; tries < 64 && contrast(c, from) < min_contrast; ++tries) c = random_colour(rng);
  if (contrast(c, from) < min_contrast) {
    for (int k = 0; k < 3; ++k) c[k] = from[k] < 0.5 ? 0.95 : 0.05;
  }
  return c;
}

struct Point {
  double x, y;
};

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    if ((poly[i].y > y) != (poly[j].y > y) &&
        x < (poly[j].x - poly[i].x) * (y - poly[i].y) / (poly[j].y - poly[i].y) + poly[i].x) {
      in = !in;
    }
  }
  return in;
}

// One foreground shape of the edge generator.
struct EdgeShape {
  bool ellipse = true;
  double cx = 0, cy = 0, rx = 1, ry = 1, angle = 0;
  std::vector<Point> poly;
  Rgb colour{};
  Rgb shade{};

  bool contains(double x, double y) const {
    if (ellipse) {
      const double c = std::cos(angle), s = std::sin(angle);
      const double u = (c * (x - cx) + s * (y - cy)) / rx;
      const double v = (-s * (x - cx) + c * (y - cy)) / ry;
      return u * u + v * v <= 1.0;
    }
    return inside_polygon(poly, x, y);
  }
  Rgb colour_at(double x, double y, double size) const {
    Rgb out{};
    for (int k = 0; k < 3; ++k) {
      out[k] = std::clamp(colour[k] + shade[k] * ((x - cx) + (y - cy)) / size, 0.0, 1.0);
    }
    return out;
  }
};

EdgeSample render_edge_sample(std::mt19937_64& rng, int size) {
  constexpr int kSuper = 4;
  constexpr int kAnnotators = 4;
  constexpr int kTile = 16;
  const double s = size;
  const Rgb bg = random_colour(rng);
  const Rgb grad{uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2)};
  const double tex_amp = uniform(rng, 0.0, 0.04);
  const double tex_fx = uniform(rng, 0.5, 2.5), tex_fy = uniform(rng, 0.5, 2.5);
  auto background = [&](double x, double y) {
    Rgb out{};
    const double t = tex_amp * std::sin(2 * std::numbers::pi * (tex_fx * x + tex_fy * y) / s);
    for (int k = 0; k < 3; ++k) out[k] = std::clamp(bg[k] + grad[k] * (x / s - 0.5) + t, 0.0, 1.0);
    return out;
  };

  const int count = 1 + static_cast<int>(rng() % 3);
  std::vector<EdgeShape> shapes;
  for (int i = 0; i < count; ++i) {
    EdgeShape sh;
    sh.cx = uniform(rng, 0.2 * s, 0.8 * s);
    sh.cy = uniform(rng, 0.2 * s, 0.8 * s);
    sh.ellipse = rng() % 2 == 0;
    if (sh.ellipse) {
      sh.rx = uniform(rng, 0.1 * s, 0.25 * s);
      sh.ry = uniform(rng, 0.1 * s, 0.25 * s);
      sh.angle = uniform(rng, 0.0, std::numbers::pi);
    } else {
      const int vertices = 3 + static_cast<int>(rng() % 4);
      const double base = uniform(rng, 0.0, 2 * std::numbers::pi);
      for (int v = 0; v < vertices; ++v) {
        const double a = base + 2 * std::numbers::pi * (v + uniform(rng, -0.25, 0.25)) / vertices;
        const double r = uniform(rng, 0.12 * s, 0.25 * s);
        sh.poly.push_back({sh.cx + r * std::cos(a), sh.cy + r * std::sin(a)});
      }
    }
    sh.colour = distinct_colour(rng, background(sh.cx, sh.cy), 0.25);
    sh.shade = {uniform(rng, -0.15, 0.15), uniform(rng, -0.15, 0.15), uniform(rng, -0.15, 0.15)};
    shapes.push_back(std::move(sh));
  }

  EdgeSample out{Tensor({1, 3, size, size}), Tensor({1, 1, size, size})};
  std::vector<int> label(static_cast<std::size_t>(size) * size, 0);
  std::vector<Rgb> clean(label.size());
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      Rgb acc{};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper, py = y + (sy + 0.5) / kSuper;
          Rgb c = background(px, py);
          for (const EdgeShape& sh : shapes) {
            if (sh.contains(px, py)) c = sh.colour_at(px, py, s);
          }
          for (int k = 0; k < 3; ++k) acc[k] += c[k];
        }
      }
      const std::size_t i = static_cast<std::size_t>(y) * size + x;
      for (int k = 0; k < 3; ++k) clean[i][k] = acc[k] / (kSuper * kSuper);
      for (std::size_t k = 0; k < shapes.size(); ++k) {
        if (shapes[k].contains(x + 0.5, y + 0.5)) label[i] = static_cast<int>(k) + 1;
      }
    }
  }

  // Annotator votes are drawn per (region pair, tile) so agreement is coherent
  // along a contour; weak contrast lowers the detection rate.
  std::map<std::tuple<int, int, int, int>, int> votes;
  std::vector<float> consensus(label.size(), 0.0f);
  auto mark = [&](std::size_t p, std::size_t q, int x, int y) {
    const auto key = std::make_tuple(std::min(label[p], label[q]), std::max(label[p], label[q]), y / kTile, x / kTile);
    auto it = votes.find(key);
    if (it == votes.end()) {
      const double rate = std::clamp(0.45 + 2.0 * contrast(clean[p], clean[q]), 0.0, 0.97);
      int v = 0;
      for (int a = 0; a < kAnnotators; ++a) v += uniform(rng, 0.0, 1.0) < rate ? 1 : 0;
      it = votes.emplace(key, v).first;
    }
    const float value = static_cast<float>(it->second) / kAnnotators;
    consensus[p] = std::max(consensus[p], value);
    consensus[q] = std::max(consensus[q], value);
  };
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * size + x;
      if (x + 1 < size && label[p] != label[p + 1]) mark(p, p + 1, x, y);
      if (y + 1 < size && label[p] != label[p + size]) mark(p, p + size, x, y);
    }
  }

  std::normal_distribution<double> noise(0.0, 0.02);
  for (int k = 0; k < 3; ++k) {
    float* dst = out.image.plane(0, k);
    for (std::size_t i = 0; i < label.size(); ++i) {
      dst[i] = static_cast<float>(std::clamp(clean[i][k] + noise(rng), 0.0, 1.0));
    }
  }
  std::copy(consensus.begin(), consensus.end(), out.gt.data());
  return out;
}

// Shape membership in unit local coordinates (radius 1).
bool class_shape_contains(int cls, double u, double v) {
  const double r2 = u * u + v * v;
  switch (cls) {
    case 0:
      return r2 <= 1.0;
    case 1:
      return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
    case 2: {
      static const std::vector<Point> tri{{0.0, -1.0}, {0.9, 0.6}, {-0.9, 0.6}};
      return inside_polygon(tri, u, v);
    }
    case 3:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case 4:
      return r2 <= 1.0 && r2 >= 0.5 * 0.5;
    case 5: {
      static const std::vector<Point> star = [] {
        std::vector<Point> p;
        for (int i = 0; i < 10; ++i) {
          const double a = -std::numbers::pi / 2 + i * std::numbers::pi / 5;
          const double r = i % 2 == 0 ? 1.0 : 0.42;
          p.push_back({r * std::cos(a), r * std::sin(a)});
        }
        return p;
      }();
      return inside_polygon(star, u, v);
    }
    case 6:
      return std::abs(u) <= 1.0 && std::abs(v) <= 0.28;
    case 7:
      return std::abs(u) <= 0.85 && std::abs(v) <= 0.85 && !(std::abs(u) <= 0.5 && std::abs(v) <= 0.5);
    case 8:
      return r2 <= 1.0 && v <= 0.15;
    default:
      return (u - 0.55) * (u - 0.55) + v * v <= 0.38 * 0.38 || (u + 0.55) * (u + 0.55) + v * v <= 0.38 * 0.38;
  }
}

void render_class_sample(std::mt19937_64& rng, int cls, int size, float* dst) {
  constexpr int kSuper = 3;
  const double s = size;
  const Rgb bg = random_colour(rng);
  const Rgb fg = distinct_colour(rng, bg, 0.3);
  const Rgb grad{uniform(rng, -0.15, 0.15), uniform(rng, -0.15, 0.15), uniform(rng, -0.15, 0.15)};
  const double cx = s / 2 + uniform(rng, -0.12, 0.12) * s;
  const double cy = s / 2 + uniform(rng, -0.12, 0.12) * s;
  const double scale = uniform(rng, 0.28, 0.4) * s;
  const bool free_rotation = cls == 6 || cls == 9;
  const double angle = free_rotation ? uniform(rng, 0.0, std::numbers::pi) : uniform(rng, -0.35, 0.35);
  const double ca = std::cos(angle), sa = std::sin(angle);
  std::normal_distribution<double> noise(0.0, 0.04);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper - cx, py = y + (sy + 0.5) / kSuper - cy;
          const double u = (ca * px + sa * py) / scale, v = (-sa * px + ca * py) / scale;
          hits += class_shape_contains(cls, u, v) ? 1 : 0;
        }
      }
      const double cov = static_cast<double>(hits) / (kSuper * kSuper);
      for (int k = 0; k < 3; ++k) {
        const double b = bg[k] + grad[k] * ((x + y) / s - 1.0);
        const double v = b * (1 - cov) + fg[k] * cov + noise(rng);
        dst[k * plane + static_cast<std::size_t>(y) * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

void check_finite(const Tensor& t, const std::string& name) {
  if (!t.all_finite()) throw NumericError("non-finite values in " + name);
}

void check_gradients(std::vector<nn::ParamRef<float>>& params) {
  for (const auto& p : params) {
    if (p.grad && !p.grad->all_finite()) throw NumericError("non-finite gradient for parameter " + p.name);
  }
}

void check_parameters(std::vector<nn::ParamRef<float>>& params) {
  for (const auto& p : params) {
    if (!p.value->all_finite()) throw NumericError("non-finite value in parameter " + p.name);
  }
}

Tensor gather_images(const ClassSample& data, std::span<const std::size_t> order) {
  const Shape s = data.images.shape();
  Tensor out({static_cast<int>(order.size()), s.c, s.h, s.w});
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::copy_n(data.images.data() + order[i] * per, per, out.data() + i * per);
  }
  return out;
}

Tensor slice_batch(const Tensor& t, int n) {
  const std::size_t per = t.shape().numel() / static_cast<std::size_t>(t.n());
  Tensor out({1, t.c(), t.h(), t.w()});
  std::copy_n(t.data() + static_cast<std::size_t>(n) * per, per, out.data());
  return out;
}

const std::array<const char*, 5> kMapNames{"side1", "side2", "side3", "side4", "fused"};

}  // namespace

// --- Losses ---------------------------------------------------------------

void LossParams::validate() const {
  if (!(lambda > 0)) throw std::invalid_argument("lambda must be positive");
  if (!(eta > 0 && eta < 1)) throw std::invalid_argument("eta must lie in (0, 1)");
  if (!(eps > 0 && eps < 0.5)) throw std::invalid_argument("eps must lie in (0, 0.5)");
}

template <typename T>
double edge_loss(const BasicTensor<T>& pred, const BasicTensor<T>& gt, const LossParams& params, BasicTensor<T>* grad) {
  params.validate();
  if (pred.shape() != gt.shape() || pred.c() != 1) {
    throw ShapeError("edge_loss: prediction " + pred.shape().str() + " and target " + gt.shape().str() +
                     " must both be [N, 1, H, W]");
  }
  if (grad) *grad = BasicTensor<T>(pred.shape());
  const std::size_t plane = pred.shape().plane();
  double total = 0;
  for (int n = 0; n < pred.n(); ++n) {
    const T* p = pred.plane(n, 0);
    const T* y = gt.plane(n, 0);
    std::size_t negatives = 0;
    for (std::size_t i = 0; i < plane; ++i) negatives += y[i] == T{0} ? 1 : 0;
    const double beta = static_cast<double>(negatives) / static_cast<double>(plane);
    const double alpha = params.lambda * (1.0 - beta);
    T* g = grad ? grad->plane(n, 0) : nullptr;
    for (std::size_t i = 0; i < plane; ++i) {
      const double yi = y[i];
      const double raw = p[i];
      const double pc = std::clamp(raw, params.eps, 1.0 - params.eps);
      const bool clamped = pc != raw;
      if (yi == 0.0) {
        total += -alpha * std::log(1.0 - pc);
        if (g && !clamped) g[i] = static_cast<T>(alpha / (1.0 - pc));
      } else if (yi >= params.eta) {
        total += -beta * std::log(pc);
        if (g && !clamped) g[i] = static_cast<T>(-beta / pc);
      }
    }
  }
  return total;
}

template <typename T>
double cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels, BasicTensor<T>* grad) {
  if (logits.h() != 1 || logits.w() != 1 || static_cast<std::size_t>(logits.n()) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + logits.shape().str() + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  const int k = logits.c();
  if (grad) *grad = BasicTensor<T>(logits.shape());
  double total = 0;
  for (int n = 0; n < logits.n(); ++n) {
    if (labels[n] < 0 || labels[n] >= k) throw std::invalid_argument("cross_entropy: label out of range");
    const T* z = logits.data() + static_cast<std::size_t>(n) * k;
    double zmax = z[0];
    for (int j = 1; j < k; ++j) zmax = std::max<double>(zmax, z[j]);
    double sum = 0;
    for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j]) - zmax);
    const double lse = zmax + std::log(sum);
    total += lse - static_cast<double>(z[labels[n]]);
    if (grad) {
      T* g = grad->data() + static_cast<std::size_t>(n) * k;
      for (int j = 0; j < k; ++j) {
        const double prob = std::exp(static_cast<double>(z[j]) - lse);
        g[j] = static_cast<T>((prob - (j == labels[n] ? 1.0 : 0.0)) / logits.n());
      }
    }
  }
  return total / logits.n();
}

// --- Optimization ---------------------------------------------------------

template <typename T>
Adam<T>::Adam(std::vector<nn::ParamRef<T>> params, AdamConfig config) : config_(config) {
  for (auto& p : params) {
    if (!p.grad) continue;
    m_.emplace_back(p.value->size(), 0.0);
    v_.emplace_back(p.value->size(), 0.0);
    params_.push_back(std::move(p));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    T* w = params_[k].value->data();
    const T* g = params_[k].grad->data();
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double gi = g[i];
      m[i] = config_.beta1 * m[i] + (1 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1 - config_.beta2) * gi * gi;
      w[i] -= static_cast<T>(config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps));
    }
  }
}

double MultiStep::at(int epoch) const {
  double lr = base;
  for (int m : milestones) {
    if (epoch >= m) lr *= gamma;
  }
  return lr;
}

// --- Synthetic data -------------------------------------------------------

std::vector<EdgeSample> synth_edge_dataset(std::uint64_t seed, int count, int size) {
  if (count < 0 || size < 8) throw std::invalid_argument("synth_edge_dataset: need count ≥ 0 and size ≥ 8");
  std::vector<EdgeSample> out(static_cast<std::size_t>(count));
  parallel_for(out.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      std::mt19937_64 rng = sample_rng(seed, i, 1);
      out[i] = render_edge_sample(rng, size);
    }
  });
  return out;
}

const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names{"disk", "square", "triangle", "plus",     "ring",
                                              "star", "bar",    "frame",    "half-disk", "two-dots"};
  return names;
}

ClassSample synth_cls_dataset(std::uint64_t seed, int count, int size, int classes) {
  if (classes < 2 || classes > 10) throw std::invalid_argument("synth_cls_dataset: classes must be in [2, 10]");
  if (count < 0 || size < 8) throw std::invalid_argument("synth_cls_dataset: need count ≥ 0 and size ≥ 8");
  ClassSample out;
  out.classes = classes;
  out.labels.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.labels[i] = i % classes;
  std::mt19937_64 shuffle_rng = sample_rng(seed, 0, 2);
  std::shuffle(out.labels.begin(), out.labels.end(), shuffle_rng);
  out.images = Tensor({count, 3, size, size});
  const std::size_t per = 3 * static_cast<std::size_t>(size) * size;
  parallel_for(static_cast<std::size_t>(count), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      std::mt19937_64 rng = sample_rng(seed, i, 3);
      render_class_sample(rng, out.labels[i], size, out.images.data() + i * per);
    }
  });
  return out;
}

// --- History --------------------------------------------------------------

std::string History::csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,step,loss,metric,lr\n";
  for (const auto& r : rows) os << r.epoch << ',' << r.step << ',' << r.loss << ',' << r.metric << ',' << r.lr << '\n';
  return os.str();
}

void History::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << csv();
}

// --- Evaluation -----------------------------------------------------------

Tensor stack_images(std::span<const EdgeSample> data, std::span<const std::size_t> order) {
  const Shape s = data[order[0]].image.shape();
  Tensor out({static_cast<int>(order.size()), s.c, s.h, s.w});
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Tensor& img = data[order[i]].image;
    if (img.shape() != s) throw ShapeError("stack_images: samples differ in shape");
    std::copy(img.values().begin(), img.values().end(), out.data() + i * s.numel());
  }
  return out;
}

Tensor stack_gts(std::span<const EdgeSample> data, std::span<const std::size_t> order) {
  const Shape s = data[order[0]].gt.shape();
  Tensor out({static_cast<int>(order.size()), 1, s.h, s.w});
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Tensor& gt = data[order[i]].gt;
    if (gt.shape() != s) throw ShapeError("stack_gts: samples differ in shape");
    std::copy(gt.values().begin(), gt.values().end(), out.data() + i * s.numel());
  }
  return out;
}

double evaluate_edge_loss(nn::PiDiNet<float>& net, std::span<const EdgeSample> data, const LossParams& params,
                          int batch) {
  if (data.empty()) return 0;
  double total = 0;
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < data.size(); b += batch) {
    idx.resize(std::min<std::size_t>(batch, data.size() - b));
    std::iota(idx.begin(), idx.end(), b);
    const Tensor gt = stack_gts(data, idx);
    for (const Tensor& m : net.forward(stack_images(data, idx))) total += edge_loss(m, gt, params);
  }
  return total / static_cast<double>(data.size());
}

double edge_f1(std::span<const Tensor> fused, std::span<const EdgeSample> data, double eta, double threshold) {
  if (fused.size() != data.size()) throw std::invalid_argument("edge_f1: map and sample counts differ");
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto p = fused[i].values();
    const auto y = data[i].gt.values();
    if (p.size() != y.size()) throw ShapeError("edge_f1: map and target sizes differ");
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (y[k] > 0 && y[k] < eta) continue;
      const bool predicted = p[k] >= threshold;
      const bool actual = y[k] >= eta;
      tp += predicted && actual;
      fp += predicted && !actual;
      fn += !predicted && actual;
    }
  }
  const std::int64_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double edge_f1(nn::PiDiNet<float>& net, std::span<const EdgeSample> data, double eta, double threshold, int batch) {
  std::vector<Tensor> fused;
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < data.size(); b += batch) {
    idx.resize(std::min<std::size_t>(batch, data.size() - b));
    std::iota(idx.begin(), idx.end(), b);
    const Tensor f = net.forward(stack_images(data, idx)).back();
    for (std::size_t i = 0; i < idx.size(); ++i) fused.push_back(slice_batch(f, static_cast<int>(i)));
  }
  return edge_f1(fused, data, eta, threshold);
}

double classification_accuracy(nn::Sequential<float>& net, const ClassSample& data, int batch) {
  const bool was_training = net.training();
  net.set_training(false);
  const std::size_t n = data.labels.size();
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < n; b += batch) {
    idx.resize(std::min<std::size_t>(batch, n - b));
    std::iota(idx.begin(), idx.end(), b);
    const Tensor logits = net.forward(gather_images(data, idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const float* z = logits.data() + i * logits.c();
      const int arg = static_cast<int>(std::max_element(z, z + logits.c()) - z);
      correct += arg == data.labels[idx[i]] ? 1 : 0;
    }
  }
  net.set_training(was_training);
  return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
}

// --- Training loops -------------------------------------------------------

History train_edge(nn::PiDiNet<float>& net, std::span<const EdgeSample> train, std::span<const EdgeSample> val,
                   const EdgeTrainConfig& config) {
  config.loss.validate();
  if (train.empty()) throw std::invalid_argument("train_edge: empty training set");
  if (config.batch < 1 || config.epochs < 0) throw std::invalid_argument("train_edge: invalid batch or epochs");
  History history;
  auto emit = [&](HistoryRow row) {
    history.rows.push_back(row);
    if (config.on_row) config.on_row(row);
  };
  const MultiStep schedule{config.lr, config.milestones, config.gamma};
  net.set_training(true);
  std::vector<nn::ParamRef<float>> params = net.parameters();
  Adam<float> opt(params, AdamConfig{config.lr});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  emit({0, 0, evaluate_edge_loss(net, train, config.loss, config.batch),
        val.empty() ? 0.0 : edge_f1(net, val, config.loss.eta, 0.5, config.batch), schedule.at(0)});
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = schedule.at(epoch - 1);
    opt.set_lr(lr);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch) {
      const std::span<const std::size_t> idx(order.data() + b, std::min<std::size_t>(config.batch, order.size() - b));
      const Tensor x = stack_images(train, idx);
      const Tensor gt = stack_gts(train, idx);
      net.zero_grad();
      const std::vector<Tensor> maps = net.forward(x);
      std::vector<Tensor> grads(maps.size());
      double loss = 0;
      for (std::size_t k = 0; k < maps.size(); ++k) {
        check_finite(maps[k], std::string("edge map ") + kMapNames[k]);
        loss += edge_loss(maps[k], gt, config.loss, &grads[k]);
        for (float& g : grads[k].values()) g /= static_cast<float>(idx.size());
      }
      if (!std::isfinite(loss)) throw NumericError("non-finite edge loss at step " + std::to_string(step));
      net.backward(grads);
      check_gradients(params);
      opt.step();
      check_parameters(params);
      ++step;
      epoch_loss += loss;
    }
    emit({epoch, step, epoch_loss / static_cast<double>(train.size()),
          val.empty() ? 0.0 : edge_f1(net, val, config.loss.eta, 0.5, config.batch), lr});
  }
  return history;
}

History train_classifier(nn::Sequential<float>& net, const ClassSample& train, const ClassSample& test,
                         const ClassTrainConfig& config) {
  if (train.labels.empty()) throw std::invalid_argument("train_classifier: empty training set");
  if (config.batch < 1 || config.epochs < 0) throw std::invalid_argument("train_classifier: invalid batch or epochs");
  History history;
  auto emit = [&](HistoryRow row) {
    history.rows.push_back(row);
    if (config.on_row) config.on_row(row);
  };
  const MultiStep schedule{config.lr, config.milestones, config.gamma};
  std::vector<nn::ParamRef<float>> params = nn::parameters(net);
  Adam<float> opt(params, AdamConfig{config.lr});
  std::mt19937_64 rng(config.seed);
  const std::size_t n = train.labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto batch_loss = [&](std::span<const std::size_t> idx) {
    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];
    return std::make_pair(gather_images(train, idx), labels);
  };

  {
    net.set_training(false);
    double initial = 0;
    for (std::size_t b = 0; b < n; b += 256) {
      const std::span<const std::size_t> idx(order.data() + b, std::min<std::size_t>(256, n - b));
      auto [x, labels] = batch_loss(idx);
      initial += cross_entropy(net.forward(x), labels) * static_cast<double>(idx.size());
    }
    emit({0, 0, initial / static_cast<double>(n), test.labels.empty() ? 0.0 : classification_accuracy(net, test),
          schedule.at(0)});
  }
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    net.set_training(true);
    const double lr = schedule.at(epoch - 1);
    opt.set_lr(lr);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t b = 0; b < n; b += config.batch) {
      const std::span<const std::size_t> idx(order.data() + b, std::min<std::size_t>(config.batch, n - b));
      auto [x, labels] = batch_loss(idx);
      nn::zero_grad(net);
      const Tensor logits = net.forward(x);
      check_finite(logits, "classifier logits");
      Tensor grad;
      const double loss = cross_entropy(logits, labels, &grad);
      if (!std::isfinite(loss)) throw NumericError("non-finite cross-entropy at step " + std::to_string(step));
      net.backward(grad);
      check_gradients(params);
      opt.step();
      check_parameters(params);
      ++step;
      epoch_loss += loss * static_cast<double>(idx.size());
    }
    emit({epoch, step, epoch_loss / static_cast<double>(n),
          test.labels.empty() ? 0.0 : classification_accuracy(net, test), lr});
  }
  net.set_training(false);
  return history;
}

template double edge_loss(const Tensor&, const Tensor&, const LossParams&, Tensor*);
template double edge_loss(const Tensor64&, const Tensor64&, const LossParams&, Tensor64*);
template double cross_entropy(const Tensor&, std::span<const int>, Tensor*);
template double cross_entropy(const Tensor64&, std::span<const int>, Tensor64*);
template class Adam<float>;
template class Adam<double>;

}  // namespace pidi::train
