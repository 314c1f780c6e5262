// Acceptance checks. Prints one line per criterion and exits non-zero when any
// selected criterion fails. `--only 1,3` restricts the run.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pidi/analysis.hpp"
#include "pidi/binary.hpp"
#include "pidi/checkpoint.hpp"
#include "pidi/image.hpp"
#include "pidi/parallel.hpp"
#include "pidi/train.hpp"

#ifdef PIDI_HAVE_CLI
#include "cli.hpp"
#endif

namespace {

using namespace pidi;
using Rng = std::mt19937_64;

// Tolerances and workloads.
constexpr int kReparamCases = 500;
constexpr double kReparamTol32 = 1e-6;
constexpr double kReparamTol64 = 1e-12;
constexpr double kConstantTol = 1e-6;
constexpr int kBconvCases = 1000;
constexpr double kGradTol = 1e-4;
constexpr int kGradSeeds = 20;
constexpr int kReplicaShapes = 200;
constexpr double kResnetFlops = 17.70e8, kResnetFlopsTol = 0.05;
constexpr double kResnetParams = 11.18e6, kResnetParamsTol = 0.02;
constexpr double kResnetMemory = 358e6, kResnetMemoryTol = 0.02;
constexpr double kBirealFlops = 1.42e8, kBirealBops = 16.76e8, kBirealOps = 1.69e8, kBirealTol = 0.10;
constexpr double kLossTol = 1e-10;
constexpr double kEdgeLossRatio = 0.5;
constexpr double kEdgeF1 = 0.70;
constexpr double kClassAccuracy = 0.90;
constexpr double kNonInferiorityMargin = 0.005;
constexpr int kSpectrumImages = 100;
constexpr double kSignTestAlpha = 0.05;
constexpr int kExportImages = 20;
constexpr int kExportGrayLevels = 1;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

constexpr std::array kKinds{pdc::Kind::cpdc, pdc::Kind::apdc, pdc::Kind::rpdc};

// --- 1 ---------------------------------------------------------------------

template <typename T>
double worst_reparam_gap(pdc::Kind kind, Rng& rng) {
  const auto pattern = pdc::probe_pattern(kind);
  double worst = 0;
  for (int c = 0; c < kReparamCases; ++c) {
    const ConvSpec s{pattern.window, uniform_int(rng, 1, 2), uniform_int(rng, 0, 2), 1, 1};
    const int h = uniform_int(rng, pattern.window, 12), w = uniform_int(rng, pattern.window, 12);
    const auto x = random_uniform<T>({uniform_int(rng, 1, 2), uniform_int(rng, 1, 4), h, w}, -1, 1, rng);
    const auto wt = random_uniform<T>({uniform_int(rng, 1, 4), x.c(), 8, 1}, -1, 1, rng);
    const auto a = pdc::pdc_forward_pairs(x, wt, pattern, s);
    const auto b = pdc::pdc_forward_reparam(x, pdc::reparameterize(wt, pattern), s);
    worst = std::max(worst, static_cast<double>(max_abs_diff(a, b)));
  }
  return worst;
}

Outcome reparam_equivalence() {
  Rng rng(101);
  Outcome o{true, ""};
  for (pdc::Kind k : kKinds) {
    const double g32 = worst_reparam_gap<float>(k, rng);
    const double g64 = worst_reparam_gap<double>(k, rng);
    o.pass = o.pass && g32 < kReparamTol32 && g64 < kReparamTol64;
    o.detail += fmt("%s 32-bit %.2e 64-bit %.2e; ", pdc::kind_name(k).c_str(), g32, g64);
  }
  o.detail += fmt("%d cases per kind and precision", kReparamCases);
  return o;
}

// --- 2 ---------------------------------------------------------------------

Outcome high_pass() {
  Rng rng(102);
  bool exact = true, dc = true;
  double const_worst = 0, float_sum_worst = 0;
  for (pdc::Kind k : kKinds) {
    const auto pattern = pdc::probe_pattern(k);
    // Weights on a dyadic grid make every partial sum exact, so the kernel must sum to 0 exactly.
    Tensor64 w({6, 5, 8, 1});
    for (double& v : w.values()) v = uniform_int(rng, -4096, 4096) / 4096.0;
    const Tensor64 kernel = pdc::reparameterize(w, pattern);
    for (int o = 0; o < 6; ++o)
      for (int c = 0; c < 5; ++c) {
        double s = 0;
        for (int y = 0; y < kernel.h(); ++y)
          for (int x = 0; x < kernel.w(); ++x) s += kernel(o, c, y, x);
        exact = exact && s == 0.0;
      }
    const Tensor wf = random_normal<float>({6, 5, 8, 1}, 0, 1, rng);
    const Tensor kf = pdc::reparameterize(wf, pattern);
    for (int o = 0; o < 6; ++o)
      for (int c = 0; c < 5; ++c) {
        double s = 0;
        for (int y = 0; y < kf.h(); ++y)
          for (int x = 0; x < kf.w(); ++x) s += kf(o, c, y, x);
        float_sum_worst = std::max(float_sum_worst, std::abs(s));
      }
    // PDC and Bi-PDC share the pixel pairs, so one set of shifting filters covers both.
    for (const Tensor64& s : analysis::shifting_filter_spectra(pattern, 16)) dc = dc && s(0, 0, 8, 8) == 0.0;
    const ConvSpec valid{pattern.window, 1, 0, 1, 1};
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor x({1, 5, 9, 9}, std::uniform_real_distribution<float>(-1, 1)(rng));
      const_worst = std::max<double>(const_worst, max_abs(pdc::pdc_forward_pairs(x, wf, pattern, valid)));
      const_worst = std::max<double>(const_worst, max_abs(pdc::pdc_forward_reparam(x, kf, valid)));
    }
  }
  return {exact && dc && const_worst < kConstantTol,
          fmt("kernel sums exactly 0: %s (float weights: max |sum| %.1e); shifting-filter DC 0: %s; "
              "constant-input max |y| %.1e",
              exact ? "yes" : "no", float_sum_worst, dc ? "yes" : "no", const_worst)};
}

// --- 3 ---------------------------------------------------------------------

Outcome binary_exactness() {
  Rng rng(103);
  int mismatches = 0;
  long long outputs = 0;
  for (int trial = 0; trial < kBconvCases; ++trial) {
    const int cin = uniform_int(rng, 1, 130);
    const int k = std::array{1, 3, 5}[uniform_int(rng, 0, 2)];
    const int stride = uniform_int(rng, 1, 2), pad = uniform_int(rng, 0, 2);
    const float tau = std::array{0.0f, 0.25f, -0.5f}[uniform_int(rng, 0, 2)];
    const int h = k + uniform_int(rng, 0, 5), w = k + uniform_int(rng, 0, 5);
    Tensor x = random_uniform<float>({uniform_int(rng, 1, 2), cin, h, w}, -1, 1, rng);
    for (std::size_t i = 0; i < x.size(); i += 7) x.data()[i] = tau;
    Tensor lw = random_normal<float>({uniform_int(rng, 1, 4), cin, k, k}, 0, 1, rng);
    for (std::size_t i = 0; i < lw.size(); i += 11) lw.data()[i] = 0.0f;
    Shape shape;
    const std::vector<long> want = oracle::binary_conv(x, lw, stride, pad, tau, shape);
    bnn::BinaryConvSpec spec;
    spec.conv = ConvSpec{k, stride, pad, 1, 1};
    spec.tau = tau;
    const Tensor got = bnn::bconv(bnn::BitTensor::pack(x, tau), bnn::BitTensor::pack(lw), spec);
    if (got.shape() != shape) {
      ++mismatches;
      continue;
    }
    for (std::size_t i = 0; i < want.size(); ++i) mismatches += static_cast<long>(got.data()[i]) != want[i];
    outputs += static_cast<long long>(want.size());
  }
  return {mismatches == 0, fmt("%d mismatches over %lld outputs in %d cases", mismatches, outputs, kBconvCases)};
}

// --- 4 ---------------------------------------------------------------------

Outcome micro_structure() {
  // Gently varying texture riding on a bright plateau: every pixel is above τ = 0.
  Tensor x({1, 1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int c = 0; c < 8; ++c) x(0, 0, y, c) = 0.6f + 0.2f * std::sin(1.3f * y) * std::cos(0.9f * c + 0.4f);
  auto constant = [](const Tensor& t) {
    return std::all_of(t.values().begin(), t.values().end(), [&](float v) { return v == t.values()[0]; });
  };
  const auto pattern = pdc::probe_pattern(pdc::Kind::cpdc);
  bnn::BinaryConvSpec spec;
  spec.conv = ConvSpec{3, 1, 0, 1, 1};
  Rng rng(104);
  const Tensor vanilla_bits = bnn::BitTensor::pack(x).unpack();
  const Tensor bipdc_bits = bnn::sign(pdc::pair_differences(x, pattern, spec.conv));
  const Tensor vanilla_out = bnn::bconv_float(x, random_normal<float>({1, 1, 3, 3}, 0, 1, rng), spec);
  const Tensor bipdc_out = bnn::bipdc_float(x, random_normal<float>({1, 1, 8, 1}, 0, 1, rng), pattern, spec);
  const bool pass = constant(vanilla_bits) && constant(vanilla_out) && !constant(bipdc_bits) && !constant(bipdc_out);
  return {pass, fmt("BConv sign bits constant: %s, outputs constant: %s; Bi-CPDC bits constant: %s, outputs "
                    "constant: %s",
                    constant(vanilla_bits) ? "yes" : "no", constant(vanilla_out) ? "yes" : "no",
                    constant(bipdc_bits) ? "yes" : "no", constant(bipdc_out) ? "yes" : "no")};
}

// --- 5 ---------------------------------------------------------------------

Outcome gradient_suite() {
  Outcome o{true, ""};
  double worst_all = 0;
  std::string worst_name;
  for (const auto& c : gradcheck::suite()) {
    double worst = 0;
    for (std::uint64_t seed = 1; seed <= kGradSeeds; ++seed) worst = std::max(worst, c.run(seed));
    if (worst >= kGradTol) {
      o.pass = false;
      o.detail += c.name + fmt(" %.2e; ", worst);
    }
    if (worst >= worst_all) {
      worst_all = worst;
      worst_name = c.name;
    }
  }
  o.detail += fmt("%zu ops x %d seeds, worst relative error %.2e (%s)", gradcheck::suite().size(), kGradSeeds,
                  worst_all, worst_name.c_str());
  return o;
}

// --- 6 ---------------------------------------------------------------------

Outcome replica_pool() {
  Tensor x({1, 4, 4, 4});
  for (int c = 0; c < 4; ++c) std::fill(x.plane(0, c), x.plane(0, c) + 16, static_cast<float>(c));
  const Tensor y = nn::replica_pool(x, 2, 2);
  // Two copies of the pooled input, then the mean of segments {0,1} and {2,3}.
  const std::vector<float> want{0, 1, 2, 3, 0, 1, 2, 3, 1, 2};
  std::vector<float> got;
  for (int c = 0; c < y.c(); ++c) got.push_back(y(0, c, 0, 0));
  bool trace_ok = got == want;
  for (int c = 0; c < y.c(); ++c)
    for (int i = 0; i < 4; ++i) trace_ok = trace_ok && y.plane(0, c)[i] == got[c];

  Rng rng(106);
  double worst = 0;
  for (int t = 0; t < kReplicaShapes; ++t) {
    const int n_seg = uniform_int(rng, 1, 4);
    const int c = n_seg * uniform_int(rng, 1, 4);
    const int m = uniform_int(rng, 1, 3);
    const Tensor in =
        random_uniform<float>({uniform_int(rng, 1, 3), c, 2 * uniform_int(rng, 1, 5), 2 * uniform_int(rng, 1, 5)},
                              -1, 1, rng);
    const Tensor64 out = nn::replica_pool(in, m, n_seg).cast<double>();
    const Tensor64 ref = oracle::replica_pool(in, m, n_seg);
    worst = out.shape() == ref.shape() ? std::max(worst, max_abs_diff(out, ref)) : 1e9;
  }
  std::ostringstream trace;
  for (std::size_t i = 0; i < got.size(); ++i) trace << (i ? "," : "") << got[i];
  return {trace_ok && worst < 1e-6,
          "trace [" + trace.str() + "] (segment mean), " +
              fmt("%d random shapes max |diff| %.1e vs brute force", kReplicaShapes, worst)};
}

// --- 7 ---------------------------------------------------------------------

bool within(double v, double ref, double tol) { return std::abs(v - ref) <= tol * ref; }

Outcome cost_rows() {
  Rng rng(107);
  const analysis::CostReport fp = analysis::count_ops(*nn::build_resnet18<float>(rng), {1, 3, 224, 224});
  const analysis::CostReport br = analysis::count_ops(*nn::build_bireal18<float>(rng), {1, 3, 224, 224});
  const auto f = [](auto v) { return static_cast<double>(v); };
  const bool ops_exact = br.ops() == f(br.flops) + f(br.bops) / 64.0 && fp.ops() == f(fp.flops) + f(fp.bops) / 64.0;
  const bool pass = within(f(fp.flops), kResnetFlops, kResnetFlopsTol) &&
                    within(f(fp.fp_params), kResnetParams, kResnetParamsTol) &&
                    within(f(fp.memory_bits()), kResnetMemory, kResnetMemoryTol) &&
                    within(f(br.flops), kBirealFlops, kBirealTol) && within(f(br.bops), kBirealBops, kBirealTol) &&
                    within(br.ops(), kBirealOps, kBirealTol) && ops_exact;
  return {pass, fmt("ResNet-18 FLOPs %.3fe8 params %.3fe6 memory %.1f Mbit; Bi-Real FLOPs %.3fe8 BOPs %.3fe8 "
                    "OPs %.3fe8; OPs identity exact: %s",
                    f(fp.flops) / 1e8, f(fp.fp_params) / 1e6, f(fp.memory_bits()) / 1e6, f(br.flops) / 1e8,
                    f(br.bops) / 1e8, br.ops() / 1e8, ops_exact ? "yes" : "no")};
}

// --- 8 ---------------------------------------------------------------------

Outcome loss_values() {
  const train::LossParams params;
  // y in (0, η): any prediction contributes nothing.
  const Tensor64 gt_a({1, 1, 1, 3}, std::vector<double>{0.0, 0.2, 1.0});
  Tensor64 p1({1, 1, 1, 3}, std::vector<double>{0.3, 0.01, 0.6}), p2 = p1;
  p2(0, 0, 0, 1) = 0.99;
  const double band = std::abs(train::edge_loss(p1, gt_a, params) - train::edge_loss(p2, gt_a, params));
  // y = 1, p = 1: contribution vanishes.
  train::LossParams tight = params;
  tight.eps = 1e-15;
  const double perfect = train::edge_loss(Tensor64({1, 1, 1, 2}, std::vector<double>{1.0, 0.25}),
                                          Tensor64({1, 1, 1, 2}, std::vector<double>{1.0, 0.2}), tight);
  // β = 0.8 (eight negatives, two dead-band pixels), p = 0.5: each negative costs 0.22·ln 2.
  Tensor64 gt_c({1, 1, 1, 10});
  gt_c(0, 0, 0, 8) = 0.2;
  gt_c(0, 0, 0, 9) = 0.1;
  const double per_pixel = train::edge_loss(Tensor64({1, 1, 1, 10}, 0.5), gt_c, params) / 8.0;
  const double hand = 0.22 * std::numbers::ln2;

  Rng rng(108);
  Tensor64 gt({2, 1, 8, 8});
  for (double& v : gt.values()) v = std::array{0.0, 0.1, 0.25, 0.5, 1.0}[uniform_int(rng, 0, 4)];
  Tensor64 grad;
  train::edge_loss(random_uniform<double>(gt.shape(), 0.05, 0.95, rng), gt, params, &grad);
  bool zero_band = true;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.data()[i] > 0 && gt.data()[i] < params.eta) zero_band = zero_band && grad.data()[i] == 0.0;
  }
  const bool pass = band <= kLossTol && std::abs(perfect) <= kLossTol && std::abs(per_pixel - hand) <= kLossTol &&
                    zero_band;
  return {pass, fmt("dead band |dL| %.1e; perfect positive %.1e; beta=0.8 per-pixel %.12f vs %.12f; dead-band "
                    "gradient exactly 0: %s",
                    band, perfect, per_pixel, hand, zero_band ? "yes" : "no")};
}

// --- 9 ---------------------------------------------------------------------

Outcome edge_training() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = train::synth_edge_dataset(1, 512, 64);
  const auto val = train::synth_edge_dataset(2, 64, 64);
  nn::NetworkSpec spec;
  spec.base_channels = 20;
  spec.block_kinds = nn::parse_config("[CARV]x4");
  train::EdgeTrainConfig c;
  c.epochs = 10;
  c.batch = 4;
  c.lr = 0.002;
  c.milestones = {7, 9};
  c.loss.lambda = 1.1;
  c.loss.eta = 0.3;
  c.seed = 7;
  c.on_row = [](const train::HistoryRow& r) {
    std::cerr << "  [edge] epoch " << r.epoch << " loss " << r.loss << " val F1 " << r.metric << std::endl;
  };
  Rng rng(c.seed);
  nn::PiDiNet<float> net(spec, rng);
  const train::History h = train::train_edge(net, data, val, c);
  const double ratio = h.rows.back().loss / h.rows.front().loss;
  const double f1 = train::edge_f1(net, val, c.loss.eta, 0.5, 8);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;

  // Determinism: two identical short runs must agree bit for bit.
  auto short_run = [&] {
    Rng r(3);
    nn::PiDiNet<float> n(spec, r);
    train::EdgeTrainConfig s = c;
    s.epochs = 1;
    s.on_row = nullptr;
    const std::vector<train::EdgeSample> few(data.begin(), data.begin() + 16);
    return train::train_edge(n, few, std::span(val).first(4), s).csv();
  };
  const bool deterministic = short_run() == short_run();
  const bool pass = ratio < kEdgeLossRatio && f1 >= kEdgeF1 && deterministic;
  return {pass, fmt("loss %.1f -> %.1f (ratio %.3f, need < %.2f); held-out F1@0.5 %.4f (need >= %.2f); "
                    "deterministic: %s; %.1f min on %d thread(s)",
                    h.rows.front().loss, h.rows.back().loss, ratio, kEdgeLossRatio, f1, kEdgeF1,
                    deterministic ? "yes" : "no", minutes, num_threads())};
}

// --- 10 --------------------------------------------------------------------

Outcome classification() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = train::synth_cls_dataset(1, 8000, 32);
  const auto test = train::synth_cls_dataset(2, 1000, 32);
  auto run = [&](double xi, std::uint64_t seed) {
    nn::NetworkSpec spec;
    spec.task = nn::Task::classify;
    spec.xi = xi;
    spec.stage_widths = {32, 64, 128};
    Rng rng(seed);
    const auto net = nn::build_bipidinet<float>(spec, rng);
    train::ClassTrainConfig c;
    c.epochs = 10;
    c.batch = 64;
    c.lr = 0.005;
    c.milestones = {7, 9};
    c.seed = seed;
    const train::History h = train::train_classifier(*net, data, test, c);
    std::cerr << "  [cls] xi " << xi << " seed " << seed << " accuracy " << h.rows.back().metric << std::endl;
    return h.rows.back().metric;
  };
  double mean_hybrid = 0, mean_plain = 0, min_hybrid = 1;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const double a = run(0.2, seed);
    mean_hybrid += a / 3;
    min_hybrid = std::min(min_hybrid, a);
    mean_plain += run(0.0, seed) / 3;
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
  const bool pass = min_hybrid >= kClassAccuracy && mean_hybrid >= mean_plain - kNonInferiorityMargin;
  return {pass, fmt("xi=0.2 accuracy mean %.4f min %.4f (need >= %.2f); xi=0 mean %.4f (margin %.3f); %.1f min on "
                    "%d thread(s)",
                    mean_hybrid, min_hybrid, kClassAccuracy, mean_plain, kNonInferiorityMargin, minutes,
                    num_threads())};
}

// --- 11 --------------------------------------------------------------------

Outcome spectrum_property() {
  const auto images = train::synth_edge_dataset(111, kSpectrumImages, 64);
  Rng rng(111);
  const int features = 16;
  const Tensor vanilla_w = random_normal<float>({features, 3, 3, 3}, 0, 1, rng);
  const Tensor bipdc_w = random_normal<float>({features, 3, 8, 1}, 0, 1, rng);
  const auto pattern = pdc::probe_pattern(pdc::Kind::cpdc);
  bnn::BinaryConvSpec spec;
  spec.conv = ConvSpec{3, 1, 0, 1, 1};
  int wins = 0, losses = 0;
  double mean_b = 0, mean_v = 0;
  for (const auto& s : images) {
    // Zero-mean input so that Sign(x) against τ = 0 is informative for BConv.
    Tensor x = s.image;
    const double mean = std::accumulate(x.values().begin(), x.values().end(), 0.0) / static_cast<double>(x.size());
    for (float& v : x.values()) v -= static_cast<float>(mean);
    const double hb = analysis::high_frequency_ratio(
        analysis::spectrum_of_features(bnn::bipdc_float(x, bipdc_w, pattern, spec)));
    const double hv =
        analysis::high_frequency_ratio(analysis::spectrum_of_features(bnn::bconv_float(x, vanilla_w, spec)));
    mean_b += hb / kSpectrumImages;
    mean_v += hv / kSpectrumImages;
    wins += hb > hv;
    losses += hb < hv;
  }
  // One-sided sign test: P(Binomial(n, 1/2) ≥ wins).
  const int n = wins + losses;
  double p = 0;
  for (int k = wins; k <= n; ++k) p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) -
                                                std::lgamma(n - k + 1.0) - n * std::numbers::ln2);
  return {mean_b > mean_v && p < kSignTestAlpha,
          fmt("mean high-frequency ratio Bi-CPDC %.4f vs BConv %.4f; %d/%d images favour Bi-CPDC, sign test p = "
              "%.2e (need < %.2f)",
              mean_b, mean_v, wins, n, p, kSignTestAlpha)};
}

// --- 12 --------------------------------------------------------------------

Outcome export_fidelity() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "pidi_acceptance_export";
  fs::create_directories(dir);
  nn::NetworkSpec spec;
  spec.base_channels = 20;
  Rng rng(112);
  nn::PiDiNet<float> net(spec, rng);
  train::EdgeTrainConfig c;
  c.epochs = 1;
  const auto data = train::synth_edge_dataset(12, 64, 64);
  train::train_edge(net, data, std::span(data).first(4), c);
  net.set_training(false);
  const std::string original = (dir / "model.pidn").string(), exported = (dir / "exported.pidn").string();
  io::save_checkpoint(original, io::make_checkpoint(spec, net.parameters()));
#ifdef PIDI_HAVE_CLI
  std::ostringstream out, err;
  if (cli::run_cli({"reparam-export", "--model", original, "--out", exported}, out, err) != 0) {
    return {false, "reparam-export failed: " + err.str()};
  }
#else
  {
    nn::PiDiNet<float> copy(spec, rng);
    io::load_parameters(io::load_checkpoint(original), copy.parameters());
    copy.reparameterize();
    io::save_checkpoint(exported, io::make_checkpoint(copy.spec(), copy.parameters()));
  }
#endif
  auto load = [&](const std::string& path) {
    const io::Checkpoint cp = io::load_checkpoint(path);
    auto m = std::make_unique<nn::PiDiNet<float>>(cp.spec, rng);
    io::load_parameters(cp, m->parameters());
    m->set_training(false);
    return m;
  };
  const auto a = load(original), b = load(exported);
  const bool vanilla = b->spec().reparameterized;
  const auto images = train::synth_edge_dataset(212, kExportImages, 64);
  int worst = 0;
  for (const auto& s : images) {
    const io::Image ia = io::map_to_image(a->forward(s.image).back());
    const io::Image ib = io::map_to_image(b->forward(s.image).back());
    for (std::size_t i = 0; i < ia.samples.size(); ++i) worst = std::max(worst, std::abs(ia.samples[i] - ib.samples[i]));
  }
  return {vanilla && worst <= kExportGrayLevels,
          fmt("exported as vanilla convolutions: %s; max difference %d gray level(s) over %d images (need <= %d)",
              vanilla ? "yes" : "no", worst, kExportImages, kExportGrayLevels)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<int, Outcome (*)()>> criteria{
      {1, reparam_equivalence}, {2, high_pass},       {3, binary_exactness}, {4, micro_structure},
      {5, gradient_suite},      {6, replica_pool},    {7, cost_rows},        {8, loss_values},
      {9, edge_training},       {10, classification}, {11, spectrum_property}, {12, export_fidelity}};
  int failed = 0;
  for (const auto& [id, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
              << fmt(" [%.1f s]", secs) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
