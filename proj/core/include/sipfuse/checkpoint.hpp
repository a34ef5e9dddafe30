#pragma once

#include "sipfuse/model.hpp"

#include <string>

namespace sipfuse {

/// Model checkpoint container.
///
/// Layout (little-endian):
///   "SIPCKPT1"                     8-byte magic
///   u32 header_len, header bytes   JSON: model config, target scale, metadata
///   u32 tensor_count
///   per tensor: u32 name_len, name, u32 rows, u32 cols, rows*cols f32 (row-major)
///   u64 FNV-1a of every preceding byte
struct Checkpoint {
  Model<float> model;
  double target_scale = 100.0;
  nlohmann::json metadata = nlohmann::json::object();
};

std::vector<std::byte> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::byte>& bytes, const std::string& context = "checkpoint");

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sipfuse
