#include "pidi/blocks.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace pidi::nn {
namespace {

constexpr std::size_t kBlocks = 16;

bool is_token(char ch) { return ch == 'C' || ch == 'A' || ch == 'R' || ch == 'V'; }

BlockKind kind_of(char ch) {
  switch (ch) {
    case 'C':
      return BlockKind::cpdc;
    case 'A':
      return BlockKind::apdc;
    case 'R':
      return BlockKind::rpdc;
    default:
      return BlockKind::vanilla;
  }
}

pdc::Kind to_pdc(BlockKind k) {
  switch (k) {
    case BlockKind::cpdc:
      return pdc::Kind::cpdc;
    case BlockKind::apdc:
      return pdc::Kind::apdc;
    default:
      return pdc::Kind::rpdc;
  }
}

// Accepts 'x', 'X' and the UTF-8 multiplication sign; returns bytes consumed.
std::size_t match_times(const std::string& s, std::size_t pos) {
  if (pos < s.size() && (s[pos] == 'x' || s[pos] == 'X')) return 1;
  if (pos + 1 < s.size() && static_cast<unsigned char>(s[pos]) == 0xC3 &&
      static_cast<unsigned char>(s[pos + 1]) == 0x97) {
    return 2;
  }
  return 0;
}

std::string render_run(const std::vector<BlockKind>& pattern, std::size_t times) {
  std::string p;
  for (BlockKind k : pattern) p += block_letter(k);
  if (times == 1 && pattern.size() == 1) return p;
  return "[" + p + "]x" + std::to_string(times);
}

template <typename T>
ModulePtr<T> make_spatial(BlockKind kind, int in, int out, int groups, bool reparameterized, std::mt19937_64& rng) {
  if (kind == BlockKind::vanilla) {
    return std::make_unique<Conv2d<T>>(in, out, ConvSpec{3, 1, 1, 1, groups}, false, rng);
  }
  const pdc::Kind pk = to_pdc(kind);
  if (reparameterized) {
    const pdc::ProbePattern p = pdc::probe_pattern(pk);
    return std::make_unique<Conv2d<T>>(in, out, ConvSpec{p.window, 1, pdc::same_padding(pk), 1, groups}, false, rng);
  }
  return std::make_unique<PdcConv<T>>(pk, in, out, 1, groups, rng);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("spec key '" + key + "' expects 0/1, got '" + v + "'");
}

int parse_int(const std::string& v, const std::string& key) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("spec key '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& v, const std::string& key) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) {
    throw std::invalid_argument("spec key '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

char block_letter(BlockKind kind) {
  switch (kind) {
    case BlockKind::cpdc:
      return 'C';
    case BlockKind::apdc:
      return 'A';
    case BlockKind::rpdc:
      return 'R';
    case BlockKind::vanilla:
      return 'V';
  }
  return '?';
}

ConfigError::ConfigError(const std::string& message, std::size_t position)
    : std::invalid_argument(message + " (at position " + std::to_string(position) + ")"), position_(position) {}

std::vector<BlockKind> parse_config(const std::string& text) {
  std::vector<BlockKind> out;
  std::size_t pos = 0;
  if (text.empty()) throw ConfigError("empty architecture string", 0);
  while (true) {
    if (pos >= text.size()) throw ConfigError("expected a block token or '['", pos);
    if (text[pos] == '[') {
      const std::size_t open = pos++;
      std::vector<BlockKind> group;
      while (pos < text.size() && is_token(text[pos])) group.push_back(kind_of(text[pos++]));
      if (pos >= text.size() || text[pos] != ']') {
        throw ConfigError(pos < text.size() ? std::string("unknown token '") + text[pos] + "'" : "unterminated '['",
                          pos);
      }
      if (group.empty()) throw ConfigError("empty group", open);
      ++pos;
      const std::size_t t = match_times(text, pos);
      if (t == 0) throw ConfigError("expected 'x' after group", pos);
      pos += t;
      const std::size_t digits = pos;
      while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
      if (pos == digits) throw ConfigError("expected repeat count", pos);
      const int times = parse_int(text.substr(digits, pos - digits), "repeat");
      if (times < 1 || times > static_cast<int>(kBlocks)) throw ConfigError("repeat count out of range", digits);
      for (int r = 0; r < times; ++r) out.insert(out.end(), group.begin(), group.end());
    } else if (is_token(text[pos])) {
      out.push_back(kind_of(text[pos++]));
    } else {
      throw ConfigError(std::string("unknown token '") + text[pos] + "'", pos);
    }
    if (out.size() > kBlocks) throw ConfigError("more than 16 blocks", pos);
    if (pos == text.size()) break;
    if (text[pos] != '-') throw ConfigError(std::string("expected '-' but found '") + text[pos] + "'", pos);
    ++pos;
  }
  if (out.size() != kBlocks) {
    throw ConfigError("architecture expands to " + std::to_string(out.size()) + " blocks, expected 16", text.size());
  }
  return out;
}

std::string render_config(std::span<const BlockKind> kinds) {
  const std::size_t n = kinds.size();
  for (std::size_t len = 1; len <= n; ++len) {
    if (n % len != 0) continue;
    bool periodic = true;
    for (std::size_t i = len; i < n && periodic; ++i) periodic = kinds[i] == kinds[i - len];
    if (periodic && len < n) return render_run({kinds.begin(), kinds.begin() + len}, n / len);
  }
  std::string out;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && kinds[j] == kinds[i]) ++j;
    if (!out.empty()) out += '-';
    out += render_run({kinds[i]}, j - i);
    i = j;
  }
  return out;
}

// --- NetworkSpec ----------------------------------------------------------

int NetworkSpec::effective_cdcm_channels() const {
  return cdcm_channels > 0 ? cdcm_channels : std::max(1, static_cast<int>(std::lround(0.4 * base_channels)));
}

void NetworkSpec::validate() const {
  if (task == Task::edge) {
    if (block_kinds.size() != kBlocks) {
      throw std::invalid_argument("edge network needs 16 block kinds, got " + std::to_string(block_kinds.size()));
    }
    if (base_channels < 1) throw std::invalid_argument("base channel count must be positive");
    if (with_cdcm) {
      const int m = effective_cdcm_channels();
      if (m >= base_channels) {
        throw std::invalid_argument("CDCM width " + std::to_string(m) + " must be smaller than C = " +
                                    std::to_string(base_channels));
      }
    }
    return;
  }
  if (!(xi >= 0.0 && xi <= 1.0)) throw std::invalid_argument("xi must lie in [0, 1]");
  if (stage_widths.empty()) throw std::invalid_argument("at least one stage width is required");
  for (int w : stage_widths) {
    if (w < 1) throw std::invalid_argument("stage widths must be positive");
  }
  if (stem_channels < 1) throw std::invalid_argument("stem width must be positive");
  if (units_per_stage < 1) throw std::invalid_argument("units per stage must be at least 1");
  if (num_classes < 2) throw std::invalid_argument("at least two classes are required");
}

std::string NetworkSpec::to_string() const {
  std::ostringstream os;
  if (task == Task::edge) {
    os << "task=edge;config=" << render_config(block_kinds) << ";channels=" << base_channels
       << ";cdcm=" << with_cdcm << ";csam=" << with_csam << ";cdcm_channels=" << effective_cdcm_channels()
       << ";reparam=" << reparameterized;
  } else {
    os << "task=cls;xi=" << format_double(xi) << ";pdc=" << pdc::kind_letter(bipdc_kind) << ";stem=" << stem_channels
       << ";widths=";
    for (std::size_t i = 0; i < stage_widths.size(); ++i) os << (i ? "," : "") << stage_widths[i];
    os << ";units=" << units_per_stage << ";classes=" << num_classes << ";tau=" << format_double(tau)
       << ";scale=" << (scale == bnn::ScaleMode::none ? "none" : "mean_abs");
  }
  return os.str();
}

NetworkSpec NetworkSpec::from_string(const std::string& text) {
  NetworkSpec s;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed spec entry '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string v = item.substr(eq + 1);
    if (key == "task") {
      if (v == "edge") {
        s.task = Task::edge;
      } else if (v == "cls") {
        s.task = Task::classify;
      } else {
        throw std::invalid_argument("unknown task '" + v + "'");
      }
    } else if (key == "config") {
      s.block_kinds = parse_config(v);
    } else if (key == "channels") {
      s.base_channels = parse_int(v, key);
    } else if (key == "cdcm") {
      s.with_cdcm = parse_bool(v, key);
    } else if (key == "csam") {
      s.with_csam = parse_bool(v, key);
    } else if (key == "cdcm_channels") {
      s.cdcm_channels = parse_int(v, key);
    } else if (key == "reparam") {
      s.reparameterized = parse_bool(v, key);
    } else if (key == "xi") {
      s.xi = parse_double(v, key);
    } else if (key == "pdc") {
      if (v.size() != 1 || (v[0] != 'C' && v[0] != 'A' && v[0] != 'R')) {
        throw std::invalid_argument("spec key 'pdc' expects C, A or R");
      }
      s.bipdc_kind = to_pdc(kind_of(v[0]));
    } else if (key == "stem") {
      s.stem_channels = parse_int(v, key);
    } else if (key == "widths") {
      s.stage_widths.clear();
      std::istringstream ws(v);
      std::string w;
      while (std::getline(ws, w, ',')) s.stage_widths.push_back(parse_int(w, key));
    } else if (key == "units") {
      s.units_per_stage = parse_int(v, key);
    } else if (key == "classes") {
      s.num_classes = parse_int(v, key);
    } else if (key == "tau") {
      s.tau = static_cast<float>(parse_double(v, key));
    } else if (key == "scale") {
      if (v == "none") {
        s.scale = bnn::ScaleMode::none;
      } else if (v == "mean_abs") {
        s.scale = bnn::ScaleMode::per_channel_mean_abs;
      } else {
        throw std::invalid_argument("unknown scale mode '" + v + "'");
      }
    } else {
      throw std::invalid_argument("unknown spec key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

// --- ReplicaPool ----------------------------------------------------------

template <typename T>
BasicTensor<T> replica_pool(const BasicTensor<T>& x, int m, int n, int out_channels) {
  const int c = x.c();
  if (m < 1 || n < 1) throw std::invalid_argument("replica_pool: M and N must be positive");
  if (c % n != 0) {
    throw ShapeError("replica_pool: channels " + std::to_string(c) + " not divisible by N = " + std::to_string(n));
  }
  const int seg = c / n;
  const int produced = m * c + seg;
  const int keep = out_channels > 0 ? out_channels : produced;
  if (keep > produced) {
    throw ShapeError("replica_pool: requested " + std::to_string(keep) + " channels but only " +
                     std::to_string(produced) + " are produced");
  }
  const BasicTensor<T> pooled = pool2x2(x, PoolMode::avg).output;
  BasicTensor<T> y({x.n(), keep, pooled.h(), pooled.w()});
  const std::size_t plane = pooled.shape().plane();
  for (int b = 0; b < x.n(); ++b) {
    for (int oc = 0; oc < keep; ++oc) {
      T* dst = y.plane(b, oc);
      if (oc < m * c) {
        std::copy_n(pooled.plane(b, oc % c), plane, dst);
        continue;
      }
      const int j = oc - m * c;
      for (int i = 0; i < n; ++i) {
        const T* src = pooled.plane(b, i * seg + j);
        for (std::size_t p = 0; p < plane; ++p) dst[p] += src[p];
      }
      for (std::size_t p = 0; p < plane; ++p) dst[p] /= static_cast<T>(n);
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> replica_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape, int m, int n,
                                     int out_channels) {
  const int c = input_shape.c;
  const int seg = c / n;
  const int keep = out_channels > 0 ? out_channels : m * c + seg;
  if (grad_out.c() != keep) throw ShapeError("replica_pool_backward: gradient channel mismatch");
  BasicTensor<T> gp({input_shape.n, c, input_shape.h / 2, input_shape.w / 2});
  const std::size_t plane = gp.shape().plane();
  for (int b = 0; b < input_shape.n; ++b) {
    for (int oc = 0; oc < keep; ++oc) {
      const T* src = grad_out.plane(b, oc);
      if (oc < m * c) {
        T* dst = gp.plane(b, oc % c);
        for (std::size_t p = 0; p < plane; ++p) dst[p] += src[p];
        continue;
      }
      const int j = oc - m * c;
      for (int i = 0; i < n; ++i) {
        T* dst = gp.plane(b, i * seg + j);
        for (std::size_t p = 0; p < plane; ++p) dst[p] += src[p] / static_cast<T>(n);
      }
    }
  }
  return pool2x2_backward(gp, input_shape, PoolMode::avg, {});
}

ReplicaConfig replica_config(int channels, int target) {
  if (channels < 1 || target < 1) throw std::invalid_argument("replica_config: widths must be positive");
  for (int m = target / channels; m >= 1; --m) {
    const int r = target - m * channels;
    if (r > 0 && channels % r == 0) return {m, channels / r, target};
  }
  const int m = std::max(1, target / channels);
  return {m, 1, m * channels + channels};
}

template <typename T>
BasicTensor<T> ReplicaPool<T>::forward(const BasicTensor<T>& x) {
  in_shape_ = x.shape();
  return replica_pool(x, m_, n_, out_channels_);
}

template <typename T>
BasicTensor<T> ReplicaPool<T>::backward(const BasicTensor<T>& grad_out) {
  return replica_pool_backward(grad_out, in_shape_, m_, n_, out_channels_);
}

template <typename T>
Shape ReplicaPool<T>::cost(const Shape& in, analysis::CostReport&) const {
  if (in.c % n_ != 0) throw ShapeError("ReplicaPool: channels not divisible by N");
  const int produced = m_ * in.c + in.c / n_;
  return {in.n, out_channels_ > 0 ? out_channels_ : produced, in.h / 2, in.w / 2};
}

// --- CDCM -----------------------------------------------------------------

template <typename T>
Cdcm<T>::Cdcm(int in_channels, int out_channels, std::mt19937_64& rng)
    : reduce_(in_channels, out_channels, ConvSpec{1, 1, 0, 1, 1}, false, rng) {
  if (out_channels >= in_channels) {
    throw std::invalid_argument("CDCM output width " + std::to_string(out_channels) + " must be below input width " +
                                std::to_string(in_channels));
  }
  for (int d : kRates) {
    branches_.push_back(std::make_unique<Conv2d<T>>(out_channels, out_channels, ConvSpec{3, 1, d, d, 1}, false, rng));
  }
}

template <typename T>
BasicTensor<T> Cdcm<T>::forward(const BasicTensor<T>& x) {
  const BasicTensor<T> r = relu_.forward(reduce_.forward(x));
  BasicTensor<T> y = branches_[0]->forward(r);
  for (std::size_t i = 1; i < branches_.size(); ++i) add_inplace(y, branches_[i]->forward(r));
  return y;
}

template <typename T>
BasicTensor<T> Cdcm<T>::backward(const BasicTensor<T>& grad_out) {
  BasicTensor<T> g = branches_[0]->backward(grad_out);
  for (std::size_t i = 1; i < branches_.size(); ++i) add_inplace(g, branches_[i]->backward(grad_out));
  return reduce_.backward(relu_.backward(g));
}

template <typename T>
void Cdcm<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  reduce_.collect(join_name(prefix, "reduce"), out);
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    branches_[i]->collect(join_name(prefix, "dil" + std::to_string(kRates[i])), out);
  }
}

template <typename T>
Shape Cdcm<T>::cost(const Shape& in, analysis::CostReport& report) const {
  const Shape r = reduce_.cost(in, report);
  Shape out = r;
  for (const auto& b : branches_) out = b->cost(r, report);
  return out;
}

template <typename T>
void Cdcm<T>::set_training(bool on) {
  this->training_ = on;
  reduce_.set_training(on);
  relu_.set_training(on);
  for (auto& b : branches_) b->set_training(on);
}

// --- CSAM -----------------------------------------------------------------

template <typename T>
Csam<T>::Csam(int channels, std::mt19937_64& rng)
    : fc_(channels, std::max(1, channels / 4), ConvSpec{1, 1, 0, 1, 1}, true, rng),
      conv_(std::max(1, channels / 4), 1, ConvSpec{3, 1, 1, 1, 1}, false, rng) {}

template <typename T>
BasicTensor<T> Csam<T>::forward(const BasicTensor<T>& x) {
  BasicTensor<T> a = gate_.forward(conv_.forward(relu_.forward(fc_.forward(x))));
  BasicTensor<T> y = multiply_by_map(x, a);
  if (this->training_) input_ = x;
  attention_ = std::move(a);
  return y;
}

template <typename T>
BasicTensor<T> Csam<T>::backward(const BasicTensor<T>& grad_out) {
  MapProductGrads<T> g = multiply_by_map_backward(grad_out, input_, attention_);
  BasicTensor<T> gx = fc_.backward(relu_.backward(conv_.backward(gate_.backward(g.gate))));
  add_inplace(gx, g.x);
  return gx;
}

template <typename T>
void Csam<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  fc_.collect(join_name(prefix, "fc"), out);
  conv_.collect(join_name(prefix, "conv"), out);
}

template <typename T>
Shape Csam<T>::cost(const Shape& in, analysis::CostReport& report) const {
  const Shape mid = fc_.cost(in, report);
  conv_.cost(mid, report);
  return in;
}

template <typename T>
void Csam<T>::set_training(bool on) {
  this->training_ = on;
  fc_.set_training(on);
  relu_.set_training(on);
  conv_.set_training(on);
  gate_.set_training(on);
}

// --- PiDiBlock ------------------------------------------------------------

template <typename T>
PiDiBlock<T>::PiDiBlock(ModulePtr<T> depthwise, int in_channels, int out_channels, bool project, std::mt19937_64& rng)
    : depthwise_(std::move(depthwise)), pointwise_(in_channels, out_channels, ConvSpec{1, 1, 0, 1, 1}, false, rng) {
  if (project) {
    shortcut_ = std::make_unique<Conv2d<T>>(in_channels, out_channels, ConvSpec{1, 1, 0, 1, 1}, true, rng);
  } else if (in_channels != out_channels) {
    throw std::invalid_argument("PiDiBlock: identity shortcut needs equal widths");
  }
}

template <typename T>
BasicTensor<T> PiDiBlock<T>::forward(const BasicTensor<T>& x) {
  BasicTensor<T> y = pointwise_.forward(relu_.forward(depthwise_->forward(x)));
  add_inplace(y, shortcut_ ? shortcut_->forward(x) : x);
  return y;
}

template <typename T>
BasicTensor<T> PiDiBlock<T>::backward(const BasicTensor<T>& grad_out) {
  BasicTensor<T> g = depthwise_->backward(relu_.backward(pointwise_.backward(grad_out)));
  add_inplace(g, shortcut_ ? shortcut_->backward(grad_out) : grad_out);
  return g;
}

template <typename T>
void PiDiBlock<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  depthwise_->collect(join_name(prefix, "dw"), out);
  pointwise_.collect(join_name(prefix, "pw"), out);
  if (shortcut_) shortcut_->collect(join_name(prefix, "shortcut"), out);
}

template <typename T>
Shape PiDiBlock<T>::cost(const Shape& in, analysis::CostReport& report) const {
  const Shape out = pointwise_.cost(depthwise_->cost(in, report), report);
  if (shortcut_) shortcut_->cost(in, report);
  return out;
}

template <typename T>
void PiDiBlock<T>::set_training(bool on) {
  this->training_ = on;
  depthwise_->set_training(on);
  relu_.set_training(on);
  pointwise_.set_training(on);
  if (shortcut_) shortcut_->set_training(on);
}

// --- PiDiNet --------------------------------------------------------------

template <typename T>
PiDiNet<T>::PiDiNet(const NetworkSpec& spec, std::mt19937_64& rng) : spec_(spec) {
  if (spec_.task != Task::edge) throw std::invalid_argument("PiDiNet requires an edge-task spec");
  spec_.validate();
  const int c = spec_.base_channels;
  const std::array<int, 4> widths{c, 2 * c, 4 * c, 4 * c};
  init_ = make_spatial<T>(spec_.block_kinds[0], 3, c, 1, spec_.reparameterized, rng);
  int in = c;
  for (std::size_t b = 1; b < kBlocks; ++b) {
    const int out = widths[b / 4];
    const bool project = b % 4 == 0;
    blocks_.push_back(std::make_unique<PiDiBlock<T>>(
        make_spatial<T>(spec_.block_kinds[b], in, in, in, spec_.reparameterized, rng), in, out, project, rng));
    in = out;
  }
  for (int s = 0; s < 4; ++s) {
    auto side = std::make_unique<Sequential<T>>();
    int ch = widths[s];
    if (spec_.with_cdcm) {
      side->add("cdcm", std::make_unique<Cdcm<T>>(ch, spec_.effective_cdcm_channels(), rng));
      ch = spec_.effective_cdcm_channels();
    }
    if (spec_.with_csam) side->add("csam", std::make_unique<Csam<T>>(ch, rng));
    side->add("head", std::make_unique<Conv2d<T>>(ch, 1, ConvSpec{1, 1, 0, 1, 1}, true, rng));
    sides_[s] = std::move(side);
  }
  fuse_ = std::make_unique<Conv2d<T>>(BasicTensor<T>({1, 4, 1, 1}, T(0.25)), BasicTensor<T>({1, 1, 1, 1}),
                                      ConvSpec{1, 1, 0, 1, 1});
}

template <typename T>
BasicTensor<T> PiDiNet<T>::run_backbone(const BasicTensor<T>& x, std::array<BasicTensor<T>, 4>& stages,
                                        int stop_stage) {
  if (x.c() != 3) throw ShapeError("PiDiNet expects 3 input channels, got " + std::to_string(x.c()));
  if (x.h() % 8 != 0 || x.w() % 8 != 0) {
    throw ShapeError("PiDiNet input height and width must be multiples of 8, got " + x.shape().str());
  }
  BasicTensor<T> h = init_->forward(x);
  if (stop_stage == 0) return h;
  for (std::size_t b = 1; b < kBlocks; ++b) {
    if (b % 4 == 0) h = pools_[b / 4 - 1].forward(h);
    h = blocks_[b - 1]->forward(h);
    if (b % 4 == 3) {
      const int s = static_cast<int>(b / 4);
      stages[s] = h;
      if (stop_stage == s + 1) return h;
    }
  }
  return h;
}

template <typename T>
std::vector<BasicTensor<T>> PiDiNet<T>::forward(const BasicTensor<T>& x) {
  std::array<BasicTensor<T>, 4> stages;
  run_backbone(x, stages, 5);
  std::array<BasicTensor<T>, 4> up;
  for (int s = 0; s < 4; ++s) {
    BasicTensor<T> logit = sides_[s]->forward(stages[s]);
    side_shapes_[s] = logit.shape();
    up[s] = logit.h() == x.h() && logit.w() == x.w() ? std::move(logit) : upsample_bilinear(logit, x.h(), x.w());
  }
  const BasicTensor<T>* parts[4] = {&up[0], &up[1], &up[2], &up[3]};
  const BasicTensor<T> fused = fuse_->forward(concat_channels<T>(std::span<const BasicTensor<T>* const>(parts, 4)));
  std::vector<BasicTensor<T>> maps;
  maps.reserve(kMaps);
  for (int s = 0; s < 4; ++s) {
    maps.push_back(sigmoid(up[s]));
    side_probs_[s] = maps.back();
  }
  maps.push_back(sigmoid(fused));
  fused_prob_ = maps.back();
  return maps;
}

template <typename T>
BasicTensor<T> PiDiNet<T>::backward(std::span<const BasicTensor<T>> grad_maps) {
  if (grad_maps.size() != kMaps) throw std::invalid_argument("PiDiNet::backward expects 5 map gradients");
  const BasicTensor<T> gcat = fuse_->backward(sigmoid_backward(grad_maps[4], fused_prob_));
  std::array<BasicTensor<T>, 4> gstage;
  for (int s = 0; s < 4; ++s) {
    BasicTensor<T> gl = sigmoid_backward(grad_maps[s], side_probs_[s]);
    add_inplace(gl, slice_channels(gcat, s, s + 1));
    const Shape& ls = side_shapes_[s];
    if (ls.h != gl.h() || ls.w != gl.w()) gl = upsample_bilinear_backward(gl, ls);
    gstage[s] = sides_[s]->backward(gl);
  }
  BasicTensor<T> g = std::move(gstage[3]);
  for (std::size_t b = kBlocks - 1; b >= 1; --b) {
    g = blocks_[b - 1]->backward(g);
    if (b % 4 == 0) {
      g = pools_[b / 4 - 1].backward(g);
      add_inplace(g, gstage[b / 4 - 1]);
    }
  }
  return init_->backward(g);
}

template <typename T>
void PiDiNet<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  init_->collect(join_name(prefix, "init"), out);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    blocks_[b]->collect(join_name(prefix, "block" + std::to_string(b + 1)), out);
  }
  for (int s = 0; s < 4; ++s) sides_[s]->collect(join_name(prefix, "side" + std::to_string(s + 1)), out);
  fuse_->collect(join_name(prefix, "fuse"), out);
}

template <typename T>
std::vector<ParamRef<T>> PiDiNet<T>::parameters() {
  std::vector<ParamRef<T>> out;
  collect("", out);
  return out;
}

template <typename T>
void PiDiNet<T>::zero_grad() {
  for (auto& p : parameters()) {
    if (p.grad) std::fill(p.grad->values().begin(), p.grad->values().end(), T{0});
  }
}

template <typename T>
std::int64_t PiDiNet<T>::parameter_count() {
  std::int64_t n = 0;
  for (auto& p : parameters()) {
    if (p.grad) n += static_cast<std::int64_t>(p.value->size());
  }
  return n;
}

template <typename T>
analysis::CostReport PiDiNet<T>::cost(const Shape& in) const {
  analysis::CostReport r;
  Shape s = init_->cost(in, r);
  std::array<Shape, 4> stage_shapes{};
  for (std::size_t b = 1; b < kBlocks; ++b) {
    if (b % 4 == 0) s = pools_[b / 4 - 1].cost(s, r);
    s = blocks_[b - 1]->cost(s, r);
    if (b % 4 == 3) stage_shapes[b / 4] = s;
  }
  for (int i = 0; i < 4; ++i) sides_[i]->cost(stage_shapes[i], r);
  fuse_->cost({in.n, 4, in.h, in.w}, r);
  return r;
}

template <typename T>
void PiDiNet<T>::set_training(bool on) {
  init_->set_training(on);
  for (auto& b : blocks_) b->set_training(on);
  for (auto& p : pools_) p.set_training(on);
  for (auto& s : sides_) s->set_training(on);
  fuse_->set_training(on);
}

template <typename T>
BasicTensor<T> PiDiNet<T>::features(const BasicTensor<T>& x, const std::string& tap) {
  std::array<BasicTensor<T>, 4> stages;
  if (tap == "init") return run_backbone(x, stages, 0);
  for (int s = 1; s <= 4; ++s) {
    if (tap == "stage" + std::to_string(s)) return run_backbone(x, stages, s);
  }
  throw std::invalid_argument("unknown feature tap '" + tap + "' (available: init, stage1, stage2, stage3, stage4)");
}

template <typename T>
void PiDiNet<T>::reparameterize() {
  auto convert = [](ModulePtr<T>& slot) {
    if (auto* p = dynamic_cast<PdcConv<T>*>(slot.get())) slot = p->to_conv();
  };
  convert(init_);
  for (auto& b : blocks_) convert(b->depthwise());
  spec_.reparameterized = true;
}

// --- Classifiers ----------------------------------------------------------

template <typename T>
std::unique_ptr<Sequential<T>> build_bipidinet(const NetworkSpec& spec, std::mt19937_64& rng) {
  if (spec.task != Task::classify) throw std::invalid_argument("Bi-PiDiNet requires a classification spec");
  spec.validate();
  auto net = std::make_unique<Sequential<T>>();
  bnn::BinaryConvSpec base;
  base.tau = spec.tau;
  base.scale = spec.scale;
  net->add("stem", std::make_unique<Conv2d<T>>(3, spec.stem_channels, ConvSpec{3, 2, 1, 1, 1}, false, rng));
  net->add("stem_bn", std::make_unique<BatchNorm2d<T>>(spec.stem_channels));
  int c = spec.stem_channels;
  if (c != spec.stage_widths.front()) {
    const ReplicaConfig rc = replica_config(c, spec.stage_widths.front());
    net->add("stem_pool", std::make_unique<ReplicaPool<T>>(rc.m, rc.n, spec.stage_widths.front()));
    c = spec.stage_widths.front();
  }
  int unit = 1;
  for (std::size_t s = 0; s < spec.stage_widths.size(); ++s) {
    const int w = spec.stage_widths[s];
    for (int j = 0; j < spec.units_per_stage; ++j) {
      const bool reduce = s > 0 && j == 0;
      ModulePtr<T> shortcut;
      if (reduce) {
        const ReplicaConfig rc = replica_config(c, w);
        shortcut = std::make_unique<ReplicaPool<T>>(rc.m, rc.n, w);
      } else if (c != w) {
        throw std::invalid_argument("stage width change without a reduction unit");
      }
      auto body = std::make_unique<HybridLayer<T>>(c, w, spec.xi, spec.bipdc_kind, reduce ? 2 : 1, base, rng);
      net->add("unit" + std::to_string(unit++), std::make_unique<Residual<T>>(std::move(body), std::move(shortcut)));
      c = w;
    }
  }
  net->add("gap", std::make_unique<GlobalAvgPool<T>>());
  net->add("fc", std::make_unique<Linear<T>>(c, spec.num_classes, rng, true));
  return net;
}

NetworkSpec imagenet_bipidinet_spec(double xi) {
  NetworkSpec s;
  s.task = Task::classify;
  s.xi = xi;
  s.stem_channels = 64;
  s.stage_widths = {128, 192, 384, 768};
  s.units_per_stage = 4;
  s.num_classes = 1000;
  return s;
}

template <typename T>
std::unique_ptr<Sequential<T>> build_resnet18(std::mt19937_64& rng, int num_classes) {
  auto net = std::make_unique<Sequential<T>>();
  net->add("conv1", std::make_unique<Conv2d<T>>(3, 64, ConvSpec{7, 2, 3, 1, 1}, false, rng));
  net->add("bn1", std::make_unique<BatchNorm2d<T>>(64));
  net->add("relu1", std::make_unique<ReLU<T>>());
  net->add("pool", std::make_unique<MaxPool<T>>(3, 2, 1));
  int c = 64;
  const std::array<int, 4> widths{64, 128, 256, 512};
  for (std::size_t s = 0; s < widths.size(); ++s) {
    for (int j = 0; j < 2; ++j) {
      const int w = widths[s];
      const int stride = (s > 0 && j == 0) ? 2 : 1;
      auto body = std::make_unique<Sequential<T>>();
      body->add("conv1", std::make_unique<Conv2d<T>>(c, w, ConvSpec{3, stride, 1, 1, 1}, false, rng));
      body->add("bn1", std::make_unique<BatchNorm2d<T>>(w));
      body->add("relu", std::make_unique<ReLU<T>>());
      body->add("conv2", std::make_unique<Conv2d<T>>(w, w, ConvSpec{3, 1, 1, 1, 1}, false, rng));
      body->add("bn2", std::make_unique<BatchNorm2d<T>>(w));
      ModulePtr<T> shortcut;
      if (stride != 1 || c != w) {
        auto sc = std::make_unique<Sequential<T>>();
        sc->add("conv", std::make_unique<Conv2d<T>>(c, w, ConvSpec{1, stride, 0, 1, 1}, false, rng));
        sc->add("bn", std::make_unique<BatchNorm2d<T>>(w));
        shortcut = std::move(sc);
      }
      const std::string name = "layer" + std::to_string(s + 1) + "_" + std::to_string(j);
      net->add(name, std::make_unique<Residual<T>>(std::move(body), std::move(shortcut)));
      net->add(name + "_relu", std::make_unique<ReLU<T>>());
      c = w;
    }
  }
  net->add("gap", std::make_unique<GlobalAvgPool<T>>());
  net->add("fc", std::make_unique<Linear<T>>(c, num_classes, rng, true));
  return net;
}

template <typename T>
std::unique_ptr<Sequential<T>> build_bireal18(std::mt19937_64& rng, int num_classes) {
  auto net = std::make_unique<Sequential<T>>();
  net->add("conv1", std::make_unique<Conv2d<T>>(3, 64, ConvSpec{7, 2, 3, 1, 1}, false, rng));
  net->add("bn1", std::make_unique<BatchNorm2d<T>>(64));
  net->add("pool", std::make_unique<MaxPool<T>>(3, 2, 1));
  int c = 64;
  const std::array<int, 4> widths{64, 128, 256, 512};
  int unit = 1;
  for (std::size_t s = 0; s < widths.size(); ++s) {
    for (int j = 0; j < 4; ++j) {
      const int w = widths[s];
      const int stride = (s > 0 && j == 0) ? 2 : 1;
      bnn::BinaryConvSpec bs;
      bs.conv = ConvSpec{3, stride, 1, 1, 1};
      auto body = std::make_unique<Sequential<T>>();
      body->add("bconv", std::make_unique<BinaryConv2d<T>>(c, w, bs, rng));
      body->add("bn", std::make_unique<BatchNorm2d<T>>(w));
      ModulePtr<T> shortcut;
      if (stride != 1 || c != w) {
        auto sc = std::make_unique<Sequential<T>>();
        sc->add("pool", std::make_unique<Pool2x2<T>>(PoolMode::avg));
        sc->add("conv", std::make_unique<Conv2d<T>>(c, w, ConvSpec{1, 1, 0, 1, 1}, false, rng));
        sc->add("bn", std::make_unique<BatchNorm2d<T>>(w));
        shortcut = std::move(sc);
      }
      net->add("unit" + std::to_string(unit++), std::make_unique<Residual<T>>(std::move(body), std::move(shortcut)));
      c = w;
    }
  }
  net->add("gap", std::make_unique<GlobalAvgPool<T>>());
  net->add("fc", std::make_unique<Linear<T>>(c, num_classes, rng, true));
  return net;
}

#define PIDI_INSTANTIATE_BLOCKS(T)                                                                           \
  template BasicTensor<T> replica_pool(const BasicTensor<T>&, int, int, int);                               \
  template BasicTensor<T> replica_pool_backward(const BasicTensor<T>&, const Shape&, int, int, int);        \
  template class ReplicaPool<T>;                                                                             \
  template class Cdcm<T>;                                                                                    \
  template class Csam<T>;                                                                                    \
  template class PiDiBlock<T>;                                                                               \
  template class PiDiNet<T>;                                                                                 \
  template std::unique_ptr<Sequential<T>> build_bipidinet(const NetworkSpec&, std::mt19937_64&);            \
  template std::unique_ptr<Sequential<T>> build_resnet18(std::mt19937_64&, int);                            \
  template std::unique_ptr<Sequential<T>> build_bireal18(std::mt19937_64&, int);

PIDI_INSTANTIATE_BLOCKS(float)
PIDI_INSTANTIATE_BLOCKS(double)

#undef PIDI_INSTANTIATE_BLOCKS

}  // namespace pidi::nn
