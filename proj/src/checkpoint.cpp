#include "qtseg/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "qtseg/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace qtseg {

namespace {

constexpr char kMagic[4] = {'Q', 'T', 'S', 'G'};
constexpr uint64_t kMaxNameLen = 4096;
constexpr uint32_t kMaxRank = 8;

uint32_t payload_crc(const float* data, int64_t count) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* bytes = reinterpret_cast<const Bytef*>(data);
  uint64_t left = static_cast<uint64_t>(count) * sizeof(float);
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<uint64_t>(left, 1u << 30));
    crc = crc32(crc, bytes, chunk);
    bytes += chunk;
    left -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

template <typename T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IoError(std::string("truncated checkpoint while reading ") + what);
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const nn::NamedTensorList& tensors) {
  std::set<std::string> seen;
  for (const auto& [name, t] : tensors) {
    if (!seen.insert(name).second) {
      throw UsageError("duplicate tensor name in checkpoint: " + name);
    }
    if (!t.defined()) throw UsageError("undefined tensor in checkpoint: " + name);
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);

  os.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, kCheckpointVersion);
  const std::string cfg = config.to_json();
  write_pod<uint64_t>(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_pod<uint64_t>(os, tensors.size());

  for (const auto& [name, t] : tensors) {
    write_pod<uint64_t>(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) {
      write_pod<uint64_t>(os, static_cast<uint64_t>(t.dim(i)));
    }
    write_pod<uint32_t>(os, payload_crc(t.data(), t.numel()));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!os) throw IoError("write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);

  char magic[4];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file (bad magic): " + path);
  }
  const auto version = read_pod<uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " (expected " + std::to_string(kCheckpointVersion) + ")");
  }

  const auto cfg_len = read_pod<uint64_t>(is, "config length");
  if (cfg_len > (1u << 20)) throw IoError("implausible config block size");
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw IoError("truncated checkpoint while reading config");

  CheckpointData data;
  try {
    data.config = ModelConfig::from_json(cfg_text);
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint carries an invalid config: ") + e.what());
  }

  const auto count = read_pod<uint64_t>(is, "entry count");
  std::set<std::string> seen;
  for (uint64_t e = 0; e < count; ++e) {
    const auto name_len = read_pod<uint64_t>(is, "name length");
    if (name_len == 0 || name_len > kMaxNameLen) {
      throw IoError("implausible tensor name length in checkpoint");
    }
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw IoError("truncated checkpoint while reading a name");
    if (!seen.insert(name).second) {
      throw IoError("duplicate tensor name in checkpoint: " + name);
    }

    const auto rank = read_pod<uint32_t>(is, "rank");
    if (rank == 0 || rank > kMaxRank) {
      throw IoError("implausible rank for tensor '" + name + "'");
    }
    Shape shape;
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const auto d = read_pod<uint64_t>(is, "dimension");
      if (d == 0 || d > (1ull << 31)) {
        throw IoError("implausible dimension for tensor '" + name + "'");
      }
      shape.push_back(static_cast<int64_t>(d));
      numel *= static_cast<int64_t>(d);
      if (numel > (int64_t{1} << 31)) {
        throw IoError("implausible element count for tensor '" + name + "'");
      }
    }

    const auto stored_crc = read_pod<uint32_t>(is, "checksum");
    Tensor t = Tensor::zeros(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!is) throw IoError("truncated payload for tensor '" + name + "'");
    if (payload_crc(t.data(), numel) != stored_crc) {
      throw IoError("checksum mismatch for tensor '" + name + "'");
    }
    data.tensors.emplace_back(std::move(name), std::move(t));
  }
  return data;
}

void save_model(const std::string& path, const QTSegModel& model) {
  nn::NamedTensorList all = model.named_parameters();
  for (auto& entry : model.named_buffers()) all.push_back(entry);
  save_checkpoint(path, model.config, all);
}

QTSegModel load_model(const std::string& path) {
  CheckpointData data = load_checkpoint(path);
  QTSegModel model = QTSegModel::build(data.config);

  std::map<std::string, Tensor> stored;
  for (auto& [name, t] : data.tensors) stored.emplace(name, t);

  nn::NamedTensorList live = model.named_parameters();
  for (auto& entry : model.named_buffers()) live.push_back(entry);

  for (auto& [name, dst] : live) {
    const auto it = stored.find(name);
    if (it == stored.end()) {
      throw IoError("checkpoint is missing tensor '" + name + "'");
    }
    const Tensor& src = it->second;
    if (!same_shape(src.shape(), dst.shape())) {
      throw IoError("checkpoint tensor '" + name + "' has shape " +
                    shape_str(src.shape()) + ", model expects " +
                    shape_str(dst.shape()));
    }
    std::copy(src.values().begin(), src.values().end(), dst.values().begin());
    stored.erase(it);
  }
  if (!stored.empty()) {
    throw IoError("checkpoint has unknown tensor '" + stored.begin()->first + "'");
  }
  return model;
}

}  // namespace qtseg
