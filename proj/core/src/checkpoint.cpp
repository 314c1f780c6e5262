#include "pidi/checkpoint.hpp"

#include <array>
#include <fstream>
#include <set>

namespace pidi::io {
namespace {

constexpr std::array<char, 4> kMagic{'P', 'I', 'D', 'N'};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic.data(), kMagic.size());
  write_u32(out, kCheckpointVersion);
  write_u32(out, checkpoint.spec.task == nn::Task::edge ? 0u : 1u);
  write_string(out, checkpoint.spec.to_string());
  write_u32(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    write_string(out, name);
    write_tensor(out, tensor);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError(path + " is not a checkpoint (bad magic)");
  const std::uint32_t version = read_u32(in);
  if (version == 0 || version > kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (max " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t task = read_u32(in);
  if (task > 1) throw FormatError("unknown checkpoint task " + std::to_string(task));
  Checkpoint cp;
  try {
    cp.spec = nn::NetworkSpec::from_string(read_string(in));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid network spec in checkpoint: ") + e.what());
  }
  if ((task == 0) != (cp.spec.task == nn::Task::edge)) throw FormatError("checkpoint task does not match its spec");
  const std::uint32_t count = read_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(in);
    cp.tensors.emplace_back(std::move(name), read_tensor(in));
  }
  return cp;
}

Checkpoint make_checkpoint(const nn::NetworkSpec& spec, const std::vector<nn::ParamRef<float>>& params) {
  Checkpoint cp;
  cp.spec = spec;
  for (const auto& p : params) cp.tensors.emplace_back(p.name, *p.value);
  return cp;
}

void load_parameters(const Checkpoint& checkpoint, const std::vector<nn::ParamRef<float>>& params) {
  std::set<std::string> used;
  for (const auto& p : params) {
    const Tensor* t = checkpoint.find(p.name);
    if (!t) throw FormatError("checkpoint has no tensor '" + p.name + "'");
    if (t->shape() != p.value->shape()) {
      throw FormatError("tensor '" + p.name + "' has shape " + t->shape().str() + ", network expects " +
                        p.value->shape().str());
    }
    *p.value = *t;
    used.insert(p.name);
  }
  for (const auto& [name, t] : checkpoint.tensors) {
    if (!used.count(name)) throw FormatError("checkpoint tensor '" + name + "' does not belong to the network");
  }
}

}  // namespace pidi::io
