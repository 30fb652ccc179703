#pragma once

// Checkpoint container: a binary file holding the run configuration and a
// flat list of named tensors.
//
//   bytes 0-3   magic "QTSG"
//   u32         format version (currently 1)
//   u64         config length, then that many bytes of UTF-8 JSON
//   u64         entry count
//   entry:      u64 name length + name bytes
//               u32 rank, then rank x u64 dims
//               u32 CRC-32 of the payload
//               product(dims) x float32 payload
//
// All integers and floats are little-endian. Saving and loading round-trip
// bit-exactly; every structural defect (bad magic, version skew, truncation,
// checksum mismatch, duplicate names) surfaces as IoError.

#include <string>

#include "qtseg/blocks.hpp"
#include "qtseg/config.hpp"
#include "qtseg/model.hpp"

namespace qtseg {

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const nn::NamedTensorList& tensors);

struct CheckpointData {
  ModelConfig config;
  nn::NamedTensorList tensors;
};

CheckpointData load_checkpoint(const std::string& path);

// Whole-model convenience wrappers: parameters and buffers together.
void save_model(const std::string& path, const QTSegModel& model);

// Rebuilds the model from the stored config and restores every tensor.
// Entries must match the rebuilt model's parameter/buffer set exactly.
QTSegModel load_model(const std::string& path);

}  // namespace qtseg
