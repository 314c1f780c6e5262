#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "pidi/analysis.hpp"
#include "pidi/checkpoint.hpp"
#include "pidi/image.hpp"
#include "pidi/parallel.hpp"
#include "pidi/train.hpp"

namespace pidi::cli {
namespace {

namespace fs = std::filesystem;

// Raised for invalid flag combinations discovered after parsing.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Model {
  nn::NetworkSpec spec;
  std::unique_ptr<nn::PiDiNet<float>> edge;
  std::unique_ptr<nn::Sequential<float>> cls;

  std::vector<nn::ParamRef<float>> parameters() { return edge ? edge->parameters() : nn::parameters(*cls); }
};

Model build_model(const nn::NetworkSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Model m;
  m.spec = spec;
  if (spec.task == nn::Task::edge) {
    m.edge = std::make_unique<nn::PiDiNet<float>>(spec, rng);
  } else {
    m.cls = nn::build_bipidinet<float>(spec, rng);
  }
  return m;
}

Model load_model(const std::string& path) {
  const io::Checkpoint cp = io::load_checkpoint(path);
  Model m = build_model(cp.spec, 0);
  io::load_parameters(cp, m.parameters());
  if (m.edge) m.edge->set_training(false);
  if (m.cls) m.cls->set_training(false);
  return m;
}

pdc::Kind parse_pdc_kind(const std::string& s) {
  if (s == "C") return pdc::Kind::cpdc;
  if (s == "A") return pdc::Kind::apdc;
  if (s == "R") return pdc::Kind::rpdc;
  throw UsageError("PDC kind must be C, A or R, got '" + s + "'");
}

std::vector<int> parse_widths(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("invalid width list '" + s + "'");
    }
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

void print_row(std::ostream& out, const train::HistoryRow& r) {
  out << "epoch " << r.epoch << " step " << r.step << " loss " << std::setprecision(6) << r.loss << " metric "
      << r.metric << " lr " << r.lr << std::endl;
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
  std::string task = "edge";
  std::string config = "[CARV]x4";
  int channels = 60;
  bool cdcm = true;
  bool csam = true;
  int cdcm_channels = 0;
  double xi = 0.2;
  std::string pdc = "C";
  int stem = 32;
  std::string widths = "32,64,128";
  int units = 2;
  int classes = 10;
  int epochs = -1;
  int batch = -1;
  double lr = -1;
  std::vector<int> milestones;
  double lambda = 1.1;
  double eta = 0.3;
  int samples = -1;
  int val_samples = -1;
  int size = -1;
  std::uint64_t seed = 1;
  std::string out = "run";
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  nn::NetworkSpec spec;
  const fs::path dir(a.out);
  fs::create_directories(dir);
  train::History history;
  Model model;
  if (a.task == "edge") {
    spec.task = nn::Task::edge;
    spec.block_kinds = nn::parse_config(a.config);
    spec.base_channels = a.channels;
    spec.with_cdcm = a.cdcm;
    spec.with_csam = a.csam;
    spec.cdcm_channels = a.cdcm_channels;
    spec.validate();
    model = build_model(spec, a.seed);
    const int size = a.size > 0 ? a.size : 64;
    const auto data = train::synth_edge_dataset(a.seed, a.samples > 0 ? a.samples : 512, size);
    const auto val = train::synth_edge_dataset(a.seed + 7919, a.val_samples > 0 ? a.val_samples : 64, size);
    train::EdgeTrainConfig c;
    c.epochs = a.epochs >= 0 ? a.epochs : 20;
    if (a.batch > 0) c.batch = a.batch;
    if (a.lr > 0) c.lr = a.lr;
    if (!a.milestones.empty()) c.milestones = a.milestones;
    c.loss.lambda = a.lambda;
    c.loss.eta = a.eta;
    c.seed = a.seed;
    c.on_row = [&](const train::HistoryRow& r) { print_row(out, r); };
    history = train::train_edge(*model.edge, data, val, c);
  } else if (a.task == "cls") {
    spec.task = nn::Task::classify;
    spec.xi = a.xi;
    spec.bipdc_kind = parse_pdc_kind(a.pdc);
    spec.stem_channels = a.stem;
    spec.stage_widths = parse_widths(a.widths);
    spec.units_per_stage = a.units;
    spec.num_classes = a.classes;
    spec.validate();
    model = build_model(spec, a.seed);
    const int size = a.size > 0 ? a.size : 32;
    const auto data = train::synth_cls_dataset(a.seed, a.samples > 0 ? a.samples : 8000, size, a.classes);
    const auto test = train::synth_cls_dataset(a.seed + 7919, a.val_samples > 0 ? a.val_samples : 1000, size, a.classes);
    train::ClassTrainConfig c;
    c.epochs = a.epochs >= 0 ? a.epochs : 60;
    if (a.batch > 0) c.batch = a.batch;
    if (a.lr > 0) c.lr = a.lr;
    if (!a.milestones.empty()) c.milestones = a.milestones;
    c.seed = a.seed;
    c.on_row = [&](const train::HistoryRow& r) { print_row(out, r); };
    history = train::train_classifier(*model.cls, data, test, c);
  } else {
    throw UsageError("--task must be edge or cls");
  }
  const std::string ckpt = (dir / "model.pidn").string();
  io::save_checkpoint(ckpt, io::make_checkpoint(spec, model.parameters()));
  history.write_csv((dir / "history.csv").string());
  out << "wrote " << ckpt << " and " << (dir / "history.csv").string() << '\n';
  return ok;
}

// --- infer ----------------------------------------------------------------

// PiDiNet needs sides divisible by 8: replicate the last row and column.
Tensor pad_to_multiple(const Tensor& x, int m) {
  const int h = (x.h() + m - 1) / m * m, w = (x.w() + m - 1) / m * m;
  if (h == x.h() && w == x.w()) return x;
  Tensor out({x.n(), x.c(), h, w});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int y = 0; y < h; ++y)
        for (int i = 0; i < w; ++i) out(n, c, y, i) = x(n, c, std::min(y, x.h() - 1), std::min(i, x.w() - 1));
  return out;
}

Tensor crop_to(const Tensor& x, int h, int w) {
  Tensor out({x.n(), x.c(), h, w});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int y = 0; y < h; ++y) std::copy_n(x.plane(n, c) + y * x.w(), w, out.plane(n, c) + y * w);
  return out;
}

int cmd_infer(const std::string& model_path, const std::string& input, const std::string& output, int top_k,
              std::ostream& out) {
  Model m = load_model(model_path);
  const Tensor x = io::image_to_tensor(io::read_pnm(input));
  if (m.edge) {
    const Tensor fused = crop_to(m.edge->forward(pad_to_multiple(x, 8)).back(), x.h(), x.w());
    io::write_pnm(output, io::map_to_image(fused));
    out << "wrote " << output << '\n';
    return ok;
  }
  const Tensor logits = m.cls->forward(x);
  std::vector<double> p(logits.c());
  const float zmax = *std::max_element(logits.values().begin(), logits.values().end());
  double sum = 0;
  for (int k = 0; k < logits.c(); ++k) sum += p[k] = std::exp(static_cast<double>(logits.data()[k] - zmax));
  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
  const auto& names = train::shape_class_names();
  for (int i = 0; i < std::min<int>(top_k, static_cast<int>(order.size())); ++i) {
    const int k = order[i];
    out << k << ' ' << (k < static_cast<int>(names.size()) ? names[k] : "class") << ' ' << std::fixed
        << std::setprecision(4) << p[k] / sum << '\n';
  }
  return ok;
}

// --- reparam-export -------------------------------------------------------

int cmd_export(const std::string& model_path, const std::string& output, std::ostream& out) {
  Model m = load_model(model_path);
  if (!m.edge) throw UsageError("Bi-PDC admits no re-parameterization: classification checkpoints cannot be exported");
  m.edge->reparameterize();
  io::save_checkpoint(output, io::make_checkpoint(m.edge->spec(), m.edge->parameters()));
  out << "wrote " << output << " (" << m.edge->spec().to_string() << ")\n";
  return ok;
}

// --- analyze --------------------------------------------------------------

struct AnalyzeArgs {
  std::string what = "spectra";
  std::string kind = "C";
  int grid = 16;
  bool log = false;
  std::string out_dir;
  std::string model;
  std::string input;
  std::string tap = "init";
  int samples = 8;
  int size = 64;
  std::uint64_t seed = 1;
  int max_transitions = 4;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
  auto dump = [&](const std::string& name, const Tensor64& spectrum) {
    if (a.out_dir.empty()) return;
    Tensor64 s = spectrum;
    if (a.log) {
      for (double& v : s.values()) v = std::log1p(v);
    }
    write_text((fs::path(a.out_dir) / (name + ".csv")).string(), analysis::spectrum_csv(s));
  };
  if (a.what == "spectra") {
    std::vector<Tensor64> spectra;
    if (a.kind == "V") {
      spectra = analysis::vanilla_shifting_spectra(3, a.grid);
    } else {
      spectra = analysis::shifting_filter_spectra(pdc::probe_pattern(parse_pdc_kind(a.kind)), a.grid);
    }
    out << "filter,dc,min,max,hf_ratio\n";
    for (std::size_t i = 0; i < spectra.size(); ++i) {
      const Tensor64& s = spectra[i];
      const auto [lo, hi] = std::minmax_element(s.values().begin(), s.values().end());
      out << i << ',' << s(0, 0, a.grid / 2, a.grid / 2) << ',' << *lo << ',' << *hi << ','
          << analysis::high_frequency_ratio(s) << '\n';
      dump("filter" + std::to_string(i), s);
    }
    return ok;
  }
  if (a.what == "features") {
    if (a.model.empty()) throw UsageError("analyze features needs --model");
    Model m = load_model(a.model);
    Tensor batch;
    if (!a.input.empty()) {
      batch = io::image_to_tensor(io::read_pnm(a.input));
    } else {
      const auto data = train::synth_edge_dataset(a.seed, a.samples, a.size);
      std::vector<std::size_t> idx(data.size());
      std::iota(idx.begin(), idx.end(), 0);
      batch = train::stack_images(data, idx);
    }
    const Tensor64 s = m.edge ? analysis::feature_spectrum(*m.edge, batch, a.tap)
                              : analysis::feature_spectrum(*m.cls, batch, a.tap);
    out << "tap," << a.tap << "\nhf_ratio," << analysis::high_frequency_ratio(s) << '\n';
    if (a.out_dir.empty()) {
      out << analysis::spectrum_csv(s);
    } else {
      dump("spectrum_" + a.tap, s);
    }
    return ok;
  }
  if (a.what == "lbp") {
    if (a.model.empty()) throw UsageError("analyze lbp needs --model");
    Model m = load_model(a.model);
    std::vector<Tensor> kernels;
    for (const auto& p : m.parameters()) {
      if (p.binary && p.value->h() == 3 && p.value->w() == 3) kernels.push_back(*p.value);
    }
    if (kernels.empty()) throw UsageError("model has no binary 3x3 kernels");
    analysis::LbpStats total;
    total.max_transitions = a.max_transitions;
    for (const Tensor& k : kernels) {
      const analysis::LbpStats s = analysis::lbp_pattern_stats(k, a.max_transitions);
      for (int c = 0; c < 256; ++c) total.counts[c] += s.counts[c];
      total.uniform += s.uniform;
      total.non_uniform += s.non_uniform;
    }
    for (int c = 0; c < 256; ++c) {
      if (total.counts[c] > 0) total.sorted.emplace_back(c, total.counts[c]);
    }
    std::sort(total.sorted.begin(), total.sorted.end(), [](const auto& x, const auto& y) {
      return x.second != y.second ? x.second > y.second : x.first < y.first;
    });
    const std::string csv = analysis::lbp_csv(total);
    if (a.out_dir.empty()) {
      out << csv;
    } else {
      write_text((fs::path(a.out_dir) / "lbp.csv").string(), csv);
    }
    out << "uniform," << total.uniform << "\nnon_uniform," << total.non_uniform << '\n';
    return ok;
  }
  throw UsageError("--what must be spectra, features or lbp");
}

// --- count-ops / bench ----------------------------------------------------

struct ArchArgs {
  std::string arch = "resnet18";
  std::string model;
  int size = 224;
  double xi = 0.2;
  std::uint64_t seed = 1;
};

// A network chosen by name or loaded from a checkpoint.
struct AnyNet {
  std::unique_ptr<nn::Sequential<float>> seq;
  Model model;

  Tensor forward(const Tensor& x) {
    if (seq) return seq->forward(x);
    if (model.edge) return model.edge->forward(x).back();
    return model.cls->forward(x);
  }
  analysis::CostReport cost(const Shape& in) const {
    if (seq) return analysis::count_ops(*seq, in);
    if (model.edge) return analysis::count_ops(*model.edge, in);
    return analysis::count_ops(*model.cls, in);
  }
};

AnyNet make_net(const ArchArgs& a) {
  AnyNet net;
  if (!a.model.empty()) {
    net.model = load_model(a.model);
    return net;
  }
  std::mt19937_64 rng(a.seed);
  if (a.arch == "resnet18") {
    net.seq = nn::build_resnet18<float>(rng);
  } else if (a.arch == "bireal18") {
    net.seq = nn::build_bireal18<float>(rng);
  } else if (a.arch == "bipidinet") {
    net.seq = nn::build_bipidinet<float>(nn::imagenet_bipidinet_spec(a.xi), rng);
  } else if (a.arch == "pidinet" || a.arch == "pidinet-tiny" || a.arch == "pidinet-l") {
    nn::NetworkSpec s;
    if (a.arch == "pidinet-tiny") s.base_channels = 20;
    if (a.arch == "pidinet-l") s.with_cdcm = s.with_csam = false;
    net.model = build_model(s, a.seed);
    net.model.edge->set_training(false);
  } else {
    throw UsageError("unknown --arch '" + a.arch + "' (resnet18, bireal18, bipidinet, pidinet, pidinet-tiny, pidinet-l)");
  }
  if (net.seq) net.seq->set_training(false);
  return net;
}

int cmd_count_ops(const ArchArgs& a, const std::string& format, std::ostream& out) {
  AnyNet net = make_net(a);
  const analysis::CostReport r = net.cost({1, 3, a.size, a.size});
  out << (format == "kv" ? analysis::format_key_values(r) : analysis::format_table(r));
  return ok;
}

int cmd_bench(const ArchArgs& a, int batch, int iters, int warmup, std::ostream& out) {
  if (iters < 1 || batch < 1 || warmup < 0) throw UsageError("--iters and --batch must be positive");
  AnyNet net = make_net(a);
  std::mt19937_64 rng(a.seed);
  const Tensor x = random_uniform<float>({batch, 3, a.size, a.size}, 0.0f, 1.0f, rng);
  Tensor y;
  for (int i = 0; i < warmup; ++i) y = net.forward(x);
  std::vector<double> ms;
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    y = net.forward(x);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / ms.size();
  double var = 0;
  for (double v : ms) var += (v - mean) * (v - mean);
  const double stddev = ms.size() > 1 ? std::sqrt(var / (ms.size() - 1)) : 0.0;
  double checksum = 0;
  for (float v : y.values()) checksum += v;
  out << std::setprecision(6) << "threads " << num_threads() << "\nmean_ms " << mean << "\nstddev_ms " << stddev
      << "\nchecksum " << std::setprecision(17) << checksum << '\n';
  return ok;
}

// Splices `key = value` lines from --config-file in front of the explicit
// flags so that flags given on the command line win.
std::vector<std::string> expand_config_file(const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config-file" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config-file=", 0) == 0) {
      path = args[i].substr(std::string("--config-file=").size());
    } else {
      rest.push_back(args[i]);
    }
  }
  if (path.empty() || rest.empty()) return args;
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::FileError& e) {
    throw UsageError(e.what());
  }
  std::vector<std::string> out{rest.front()};
  for (const CLI::ConfigItem& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty()) throw UsageError("config file sections are not supported: " + item.fullname());
    std::string value;
    for (std::size_t k = 0; k < item.inputs.size(); ++k) value += (k ? "," : "") + item.inputs[k];
    out.push_back("--" + item.name + "=" + value);
  }
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pixel difference convolution toolkit", "pidi"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  int threads = 0;
  std::string config_file;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--threads", threads, "Worker threads (0: PIDI_THREADS or all cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--config-file", config_file, "Read 'key = value' options from a file; flags take precedence");
  };

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Train on synthetic data and write a checkpoint and history CSV");
  add_common(train);
  train->add_option("--task", ta.task, "edge or cls")->check(CLI::IsMember({"edge", "cls"}));
  train->add_option("--config", ta.config, "Block configuration, e.g. \"[CARV]x4\"");
  train->add_option("--channels", ta.channels, "Base channel count C");
  train->add_flag("--cdcm,!--no-cdcm", ta.cdcm, "Use CDCM in side heads");
  train->add_flag("--csam,!--no-csam", ta.csam, "Use CSAM in side heads");
  train->add_option("--cdcm-channels", ta.cdcm_channels, "CDCM width M (0: round(0.4 C))");
  train->add_option("--xi", ta.xi, "Bi-PDC channel fraction");
  train->add_option("--pdc", ta.pdc, "Bi-PDC kind: C, A or R");
  train->add_option("--stem", ta.stem, "Stem width");
  train->add_option("--widths", ta.widths, "Comma-separated stage widths");
  train->add_option("--units", ta.units, "Units per stage, reduction unit included");
  train->add_option("--classes", ta.classes, "Number of classes");
  train->add_option("--epochs", ta.epochs, "Epochs (default 20 edge, 60 cls)");
  train->add_option("--batch", ta.batch, "Batch size (default 8 edge, 64 cls)");
  train->add_option("--lr", ta.lr, "Initial learning rate (default 0.005 edge, 0.001 cls)");
  train->add_option("--milestones", ta.milestones, "Epochs at which the rate decays by 0.1")->delimiter(',');
  train->add_option("--lambda", ta.lambda, "Edge loss lambda");
  train->add_option("--eta", ta.eta, "Edge loss annotator threshold");
  train->add_option("--samples", ta.samples, "Training samples (default 512 edge, 8000 cls)");
  train->add_option("--val-samples", ta.val_samples, "Held-out samples (default 64 edge, 1000 cls)");
  train->add_option("--size", ta.size, "Image side (default 64 edge, 32 cls)");
  train->add_option("--seed", ta.seed, "Random seed");
  train->add_option("--out", ta.out, "Output directory");

  std::string model_path, input, output = "edges.pgm";
  int top_k = 5;
  CLI::App* infer = app.add_subcommand("infer", "Run a checkpoint on a PGM/PPM image");
  add_common(infer);
  infer->add_option("--model", model_path, "Checkpoint")->required();
  infer->add_option("--input", input, "Input image (P2, P3, P5, P6)")->required();
  infer->add_option("--output", output, "Edge map output (PGM)");
  infer->add_option("--top-k", top_k, "Labels to print for classifiers")->check(CLI::PositiveNumber);

  std::string export_out;
  CLI::App* exp = app.add_subcommand("reparam-export", "Rewrite every PDC layer as a vanilla convolution");
  add_common(exp);
  exp->add_option("--model", model_path, "Trained edge checkpoint")->required();
  exp->add_option("--out", export_out, "Exported checkpoint")->required();

  AnalyzeArgs aa;
  CLI::App* analyze = app.add_subcommand("analyze", "Spectra of shifting filters or features, LBP statistics");
  add_common(analyze);
  analyze->add_option("--what", aa.what, "spectra, features or lbp")
      ->check(CLI::IsMember({"spectra", "features", "lbp"}));
  analyze->add_option("--kind", aa.kind, "Filter kind for spectra: C, A, R or V");
  analyze->add_option("--grid", aa.grid, "Spectrum grid size")->check(CLI::PositiveNumber);
  analyze->add_flag("--log", aa.log, "Write log(1 + |F|) matrices");
  analyze->add_option("--out-dir", aa.out_dir, "Directory for CSV matrices");
  analyze->add_option("--model", aa.model, "Checkpoint for features or lbp");
  analyze->add_option("--input", aa.input, "Image for features (default: synthetic batch)");
  analyze->add_option("--tap", aa.tap, "Feature tap");
  analyze->add_option("--samples", aa.samples, "Synthetic images for features")->check(CLI::PositiveNumber);
  analyze->add_option("--size", aa.size, "Synthetic image side")->check(CLI::PositiveNumber);
  analyze->add_option("--seed", aa.seed, "Random seed");
  analyze->add_option("--max-transitions", aa.max_transitions, "Uniform LBP transition limit");

  ArchArgs arch;
  std::string format = "table";
  CLI::App* count = app.add_subcommand("count-ops", "FLOPs, BOPs, OPs and memory of a network");
  add_common(count);
  count->add_option("--arch", arch.arch, "resnet18, bireal18, bipidinet, pidinet, pidinet-tiny, pidinet-l");
  count->add_option("--model", arch.model, "Count a checkpoint instead of a named architecture");
  count->add_option("--size", arch.size, "Input side")->check(CLI::PositiveNumber);
  count->add_option("--xi", arch.xi, "Bi-PDC fraction for bipidinet");
  count->add_option("--format", format, "table or kv")->check(CLI::IsMember({"table", "kv"}));

  int batch = 1, iters = 10, warmup = 1;
  CLI::App* bench = app.add_subcommand("bench", "Time forward passes");
  add_common(bench);
  bench->add_option("--arch", arch.arch, "Architecture name, as for count-ops");
  bench->add_option("--model", arch.model, "Checkpoint instead of a named architecture");
  bench->add_option("--size", arch.size, "Input side")->check(CLI::PositiveNumber);
  bench->add_option("--xi", arch.xi, "Bi-PDC fraction for bipidinet");
  bench->add_option("--batch", batch, "Batch size");
  bench->add_option("--iters", iters, "Timed repetitions");
  bench->add_option("--warmup", warmup, "Untimed repetitions");
  bench->add_option("--seed", arch.seed, "Input seed");

  try {
    const std::vector<std::string> expanded = expand_config_file(args);
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << '\n';
    return user_error;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return user_error;
  }

  try {
    if (threads > 0) set_num_threads(threads);
    if (*train) return cmd_train(ta, out);
    if (*infer) return cmd_infer(model_path, input, output, top_k, out);
    if (*exp) return cmd_export(model_path, export_out, out);
    if (*analyze) return cmd_analyze(aa, out);
    if (*count) return cmd_count_ops(arch, format, out);
    if (*bench) return cmd_bench(arch, batch, iters, warmup, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return numeric_failure;
  } catch (const nn::ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return user_error;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return user_error;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return user_error;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return user_error;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return internal_error;
  }
  return user_error;
}

}  // namespace pidi::cli
