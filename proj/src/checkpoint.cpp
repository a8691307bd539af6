#include "bcsnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "bcsnet/errors.hpp"

namespace bcsnet {

namespace {

constexpr char kMagic[8] = {'B', 'C', 'S', 'N', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint: " + path);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& path) {
  const auto len = read_pod<std::uint32_t>(in, path);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw IoError("truncated checkpoint: " + path);
  return s;
}

}  // namespace

Checkpoint snapshot(const Model& model, const TrainConfig& config, std::int64_t epoch) {
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.epoch = epoch;
  for (const auto& [name, var] : model.params()) ckpt.tensors[name] = var.value();
  for (const auto& [name, buf] : model.buffers()) ckpt.tensors[name] = *buf;
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);

  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, Checkpoint::kVersion);
  write_string(out, serialize_train_config(ckpt.config));
  write_pod<std::int64_t>(out, ckpt.epoch);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    write_string(out, name);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.ndim()));
    for (std::int64_t d : tensor.shape()) write_pod<std::int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  }
  if (!out) throw IoError("failed to write checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file: " + path);
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != Checkpoint::kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }

  Checkpoint ckpt;
  ckpt.config = parse_train_config(read_string(in, path));
  ckpt.epoch = read_pod<std::int64_t>(in, path);
  const auto count = read_pod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(in, path);
    const auto ndim = read_pod<std::uint32_t>(in, path);
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) d = read_pod<std::int64_t>(in, path);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint: " + path);
    ckpt.tensors[name] = std::move(t);
  }
  return ckpt;
}

Model restore_model(const Checkpoint& ckpt) {
  Model model = Model::init(model_config_from(ckpt.config), ckpt.config.seed);

  std::size_t expected = model.params().size() + model.buffers().size();
  if (ckpt.tensors.size() != expected) {
    throw ValidationError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                          " tensors but the model defines " + std::to_string(expected));
  }
  for (auto& [name, var] : model.params()) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw ValidationError("checkpoint missing parameter: " + name);
    if (!it->second.same_shape(var.value())) {
      throw ValidationError("checkpoint shape mismatch for " + name + ": " +
                            it->second.shape_str() + " vs " + var.value().shape_str());
    }
    var.mutable_value() = it->second;
  }
  for (auto& [name, buf] : model.buffers()) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw ValidationError("checkpoint missing buffer: " + name);
    if (!it->second.same_shape(*buf)) {
      throw ValidationError("checkpoint shape mismatch for buffer " + name);
    }
    *buf = it->second;
  }
  return model;
}

}  // namespace bcsnet
