#pragma once

// Central finite-difference checks of every differentiable operation in 64-bit.
// Each case maps a seed to the worst relative error over all checked inputs.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pidi/blocks.hpp"
#include "pidi/ops.hpp"
#include "pidi/pdc.hpp"
#include "pidi/train.hpp"

namespace gradcheck {

using pidi::ConvSpec;
using pidi::Shape;
using pidi::Tensor64;
using Rng = std::mt19937_64;

struct Case {
  std::string name;
  std::function<double(std::uint64_t)> run;
};

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline Tensor64 normal(const Shape& s, Rng& rng) { return pidi::random_normal<double>(s, 0.0, 1.0, rng); }

/// Values with |v| ≥ margin, so ±h perturbations never cross a kink at 0.
inline Tensor64 away_from_zero(const Shape& s, double margin, Rng& rng) {
  Tensor64 t = pidi::random_uniform<double>(s, -1.0, 1.0, rng);
  for (double& v : t.values()) v = v < 0 ? v - margin : v + margin;
  return t;
}

/// Error of `analytic` against the numeric gradient of project(forward(x), r).
inline double check_input(const std::function<Tensor64(const Tensor64&)>& forward, const Tensor64& x,
                          const Tensor64& r, const Tensor64& analytic) {
  const Tensor64 numeric =
      oracle::numeric_gradient([&](const Tensor64& t) { return oracle::project(forward(t), r); }, x);
  return oracle::relative_error(analytic, numeric);
}

inline Tensor64 from_vector(const std::vector<double>& v) {
  Tensor64 t({1, 1, 1, static_cast<int>(v.size())});
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

inline std::span<const double> view(const Tensor64& t) { return {t.data(), t.size()}; }

/// Input and every non-binary parameter of a module against finite differences.
inline double check_module(pidi::nn::Module<double>& m, const Tensor64& x, Rng& rng) {
  const Tensor64 r = normal(m.forward(x).shape(), rng);
  pidi::nn::zero_grad(m);
  m.forward(x);
  const Tensor64 gx = m.backward(r);
  auto f = [&](const Tensor64& t) { return oracle::project(m.forward(t), r); };
  double worst = oracle::relative_error(gx, oracle::numeric_gradient(f, x));
  for (const auto& p : pidi::nn::parameters(m)) {
    if (p.grad == nullptr || p.binary) continue;
    const Tensor64 saved = *p.value;
    const Tensor64 numeric = oracle::numeric_gradient(
        [&](const Tensor64& v) {
          *p.value = v;
          return oracle::project(m.forward(x), r);
        },
        saved);
    *p.value = saved;
    worst = std::max(worst, oracle::relative_error(*p.grad, numeric));
  }
  return worst;
}

inline double conv2d_case(std::uint64_t seed) {
  Rng rng(seed);
  const int groups = uniform_int(rng, 1, 2);
  const int cin = groups * uniform_int(rng, 1, 3), cout = groups * uniform_int(rng, 1, 2);
  const int k = 2 * uniform_int(rng, 0, 1) + 1;
  const ConvSpec s{k, uniform_int(rng, 1, 2), uniform_int(rng, 0, 2), uniform_int(rng, 1, 2), groups};
  const Tensor64 x = normal({2, cin, uniform_int(rng, 5, 8), uniform_int(rng, 5, 8)}, rng);
  const Tensor64 w = normal({cout, cin / groups, k, k}, rng);
  const Tensor64 r = normal(pidi::conv2d_output_shape(x.shape(), w.shape(), s), rng);
  const auto g = pidi::conv2d_backward(r, x, w, s);
  const double ex = check_input([&](const Tensor64& t) { return pidi::conv2d(t, w, s); }, x, r, g.input);
  const double ew = check_input([&](const Tensor64& t) { return pidi::conv2d(x, t, s); }, w, r, g.weight);
  pidi::nn::Conv2d<double> layer(cin, cout, s, true, rng);
  return std::max({ex, ew, check_module(layer, x, rng)});
}

inline double pdc_case(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0;
  for (pidi::pdc::Kind kind : {pidi::pdc::Kind::cpdc, pidi::pdc::Kind::apdc, pidi::pdc::Kind::rpdc}) {
    const auto pattern = pidi::pdc::probe_pattern(kind);
    const ConvSpec s{pattern.window, uniform_int(rng, 1, 2), uniform_int(rng, 0, 2), 1, 1};
    const int cin = uniform_int(rng, 1, 3), cout = uniform_int(rng, 1, 3);
    const Tensor64 x = normal({1, cin, uniform_int(rng, 5, 8), uniform_int(rng, 5, 8)}, rng);
    const Tensor64 w = normal({cout, cin, 8, 1}, rng);
    const Tensor64 r = normal(pidi::pdc::pdc_forward_pairs(x, w, pattern, s).shape(), rng);
    const auto g = pidi::pdc::pdc_backward_pairs(r, x, w, pattern, s);
    worst = std::max(worst, check_input([&](const Tensor64& t) { return pidi::pdc::pdc_forward_pairs(t, w, pattern, s); },
                                        x, r, g.input));
    worst = std::max(worst, check_input([&](const Tensor64& t) { return pidi::pdc::pdc_forward_pairs(x, t, pattern, s); },
                                        w, r, g.weight));
    pidi::nn::PdcConv<double> layer(kind, 2, 2, 1, 2, rng);
    worst = std::max(worst, check_module(layer, normal({1, 2, 6, 6}, rng), rng));
  }
  return worst;
}

inline double pool_case(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0;
  const Tensor64 x = normal({2, 2, 2 * uniform_int(rng, 2, 4), 2 * uniform_int(rng, 2, 4)}, rng);
  for (pidi::PoolMode mode : {pidi::PoolMode::max, pidi::PoolMode::avg}) {
    const auto p = pidi::pool2x2(x, mode);
    const Tensor64 r = normal(p.output.shape(), rng);
    const Tensor64 g = pidi::pool2x2_backward(r, x.shape(), mode, p.argmax);
    worst = std::max(worst, check_input([&](const Tensor64& t) { return pidi::pool2x2(t, mode).output; }, x, r, g));
  }
  const auto mp = pidi::max_pool(x, 3, 2, 1);
  const Tensor64 r = normal(mp.output.shape(), rng);
  const Tensor64 g = pidi::max_pool_backward(r, x.shape(), mp.argmax);
  worst = std::max(worst, check_input([&](const Tensor64& t) { return pidi::max_pool(t, 3, 2, 1).output; }, x, r, g));
  return worst;
}

inline double resample_case(std::uint64_t seed) {
  Rng rng(seed);
  const Tensor64 x = normal({2, 2, uniform_int(rng, 2, 5), uniform_int(rng, 2, 5)}, rng);
  const int oh = uniform_int(rng, x.h(), 11), ow = uniform_int(rng, x.w(), 11);
  Tensor64 r = normal({2, 2, oh, ow}, rng);
  const double eu = check_input([&](const Tensor64& t) { return pidi::upsample_bilinear(t, oh, ow); }, x, r,
                                pidi::upsample_bilinear_backward(r, x.shape()));
  r = normal({2, 2, 1, 1}, rng);
  const double eg = check_input([&](const Tensor64& t) { return pidi::global_avg_pool(t); }, x, r,
                                pidi::global_avg_pool_backward(r, x.shape()));
  return std::max(eu, eg);
}

inline double activation_case(std::uint64_t seed) {
  Rng rng(seed);
  const Tensor64 x = away_from_zero({2, 3, 4, 5}, 0.05, rng);
  const Tensor64 r = normal(x.shape(), rng);
  double worst = check_input([](const Tensor64& t) { return pidi::relu(t); }, x, r, pidi::relu_backward(r, x));
  const Tensor64 slopes = pidi::random_uniform<double>({1, 1, 1, 3}, -0.5, 0.5, rng);
  const auto pg = pidi::prelu_backward(r, x, view(slopes));
  worst = std::max(worst, check_input([&](const Tensor64& t) { return pidi::prelu(t, view(slopes)); }, x, r, pg.input));
  worst = std::max(worst, check_input([&](const Tensor64& t) { return pidi::prelu(x, view(t)); }, slopes, r,
                                      from_vector(pg.slopes)));
  const Tensor64 y = pidi::sigmoid(x);
  worst = std::max(worst, check_input([](const Tensor64& t) { return pidi::sigmoid(t); }, x, r,
                                      pidi::sigmoid_backward(r, y)));
  const Tensor64 gate = pidi::random_uniform<double>({2, 1, 4, 5}, 0, 1, rng);
  const auto mg = pidi::multiply_by_map_backward(r, x, gate);
  worst = std::max(worst, check_input([&](const Tensor64& t) { return pidi::multiply_by_map(t, gate); }, x, r, mg.x));
  worst = std::max(worst, check_input([&](const Tensor64& t) { return pidi::multiply_by_map(x, t); }, gate, r, mg.gate));
  return worst;
}

inline double linear_case(std::uint64_t seed) {
  Rng rng(seed);
  const int k = uniform_int(rng, 1, 6), out = uniform_int(rng, 1, 4);
  const Tensor64 x = normal({3, k, 1, 1}, rng), w = normal({out, k, 1, 1}, rng), b = normal({1, 1, 1, out}, rng);
  const Tensor64 r = normal({3, out, 1, 1}, rng);
  const auto g = pidi::linear_backward(r, x, w);
  return std::max({check_input([&](const Tensor64& t) { return pidi::linear(t, w, view(b)); }, x, r, g.input),
                   check_input([&](const Tensor64& t) { return pidi::linear(x, t, view(b)); }, w, r, g.weight),
                   check_input([&](const Tensor64& t) { return pidi::linear(x, w, view(t)); }, b, r,
                               from_vector(g.bias))});
}

inline double batch_norm_case(std::uint64_t seed) {
  Rng rng(seed);
  const Tensor64 x = normal({3, 2, 3, 3}, rng);
  const Tensor64 gamma = pidi::random_uniform<double>({1, 1, 1, 2}, 0.5, 1.5, rng), beta = normal({1, 1, 1, 2}, rng);
  auto run = [&](const Tensor64& in, const Tensor64& ga, const Tensor64& be, pidi::BatchNormCache<double>& cache) {
    std::vector<double> mean(2, 0.0), var(2, 1.0);
    return pidi::batch_norm_train(in, view(ga), view(be), std::span<double>(mean), std::span<double>(var), 0.1,
                                  1e-5, cache);
  };
  pidi::BatchNormCache<double> cache;
  const Tensor64 r = normal(run(x, gamma, beta, cache).shape(), rng);
  const auto g = pidi::batch_norm_backward(r, view(gamma), cache);
  pidi::BatchNormCache<double> scratch;
  return std::max(
      {check_input([&](const Tensor64& t) { return run(t, gamma, beta, scratch); }, x, r, g.input),
       check_input([&](const Tensor64& t) { return run(x, t, beta, scratch); }, gamma, r, from_vector(g.gamma)),
       check_input([&](const Tensor64& t) { return run(x, gamma, t, scratch); }, beta, r, from_vector(g.beta))});
}

inline double cdcm_case(std::uint64_t seed) {
  Rng rng(seed);
  const int c = uniform_int(rng, 2, 4);
  pidi::nn::Cdcm<double> m(c, uniform_int(rng, 1, c - 1), rng);
  return check_module(m, normal({1, c, uniform_int(rng, 5, 9), uniform_int(rng, 5, 9)}, rng), rng);
}

inline double csam_case(std::uint64_t seed) {
  Rng rng(seed);
  const int c = uniform_int(rng, 1, 4);
  pidi::nn::Csam<double> m(c, rng);
  return check_module(m, normal({2, c, uniform_int(rng, 3, 6), uniform_int(rng, 3, 6)}, rng), rng);
}

inline double block_case(std::uint64_t seed) {
  Rng rng(seed);
  const int cin = uniform_int(rng, 1, 3), cout = cin * uniform_int(rng, 1, 2);
  const auto kind = static_cast<pidi::pdc::Kind>(uniform_int(rng, 0, 2));
  pidi::nn::PiDiBlock<double> m(std::make_unique<pidi::nn::PdcConv<double>>(kind, cin, cin, 1, cin, rng), cin, cout,
                                cout != cin, rng);
  return check_module(m, normal({1, cin, 6, 6}, rng), rng);
}

inline double replica_pool_case(std::uint64_t seed) {
  Rng rng(seed);
  const int c = uniform_int(rng, 1, 4);
  int n = 1;
  for (int d = c; d >= 1; --d) {
    if (c % d == 0 && uniform_int(rng, 0, 1)) {
      n = d;
      break;
    }
  }
  pidi::nn::ReplicaPool<double> m(uniform_int(rng, 1, 3), n);
  return check_module(m, normal({2, c, 2 * uniform_int(rng, 1, 3), 2 * uniform_int(rng, 1, 3)}, rng), rng);
}

inline double edge_loss_case(std::uint64_t seed) {
  Rng rng(seed);
  const Tensor64 p = pidi::random_uniform<double>({2, 1, 5, 6}, 0.05, 0.95, rng);
  Tensor64 y(p.shape());
  const double levels[] = {0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0};
  for (double& v : y.values()) v = levels[uniform_int(rng, 0, 6)];
  pidi::train::LossParams params;
  params.lambda = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  params.eta = std::uniform_real_distribution<double>(0.1, 0.6)(rng);
  Tensor64 g;
  pidi::train::edge_loss(p, y, params, &g);
  const Tensor64 numeric =
      oracle::numeric_gradient([&](const Tensor64& t) { return pidi::train::edge_loss(t, y, params); }, p);
  return oracle::relative_error(g, numeric);
}

inline double cross_entropy_case(std::uint64_t seed) {
  Rng rng(seed);
  const int n = uniform_int(rng, 1, 5), k = uniform_int(rng, 2, 7);
  Tensor64 z = normal({n, k, 1, 1}, rng);
  for (double& v : z.values()) v *= 3;
  std::vector<int> labels(n);
  for (int& l : labels) l = uniform_int(rng, 0, k - 1);
  Tensor64 g;
  pidi::train::cross_entropy(z, labels, &g);
  const Tensor64 numeric =
      oracle::numeric_gradient([&](const Tensor64& t) { return pidi::train::cross_entropy(t, labels); }, z);
  return oracle::relative_error(g, numeric);
}

inline std::vector<Case> suite() {
  return {{"conv2d", conv2d_case},
          {"pdc", pdc_case},
          {"pools", pool_case},
          {"resampling", resample_case},
          {"activations", activation_case},
          {"linear", linear_case},
          {"batch_norm", batch_norm_case},
          {"cdcm", cdcm_case},
          {"csam", csam_case},
          {"pidi_block", block_case},
          {"replica_pool", replica_pool_case},
          {"edge_loss", edge_loss_case},
          {"cross_entropy", cross_entropy_case}};
}

}  // namespace gradcheck
