#include "sipfuse/checkpoint.hpp"

#include "binary_io.hpp"
#include "sipfuse/checksum.hpp"
#include "sipfuse/errors.hpp"

#include <cstring>

namespace sipfuse {

namespace {
constexpr char kMagic[8] = {'S', 'I', 'P', 'C', 'K', 'P', 'T', '1'};
}

std::vector<std::byte> encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.put_bytes(kMagic, sizeof(kMagic));
  nlohmann::json header;
  header["model"] = ckpt.model.config;
  header["target_scale"] = ckpt.target_scale;
  header["metadata"] = ckpt.metadata;
  w.put_string(header.dump());
  const auto& tensors = ckpt.model.params.tensors();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.value.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.value.cols()));
    for (Index r = 0; r < t.value.rows(); ++r) {
      for (Index c = 0; c < t.value.cols(); ++c) w.put<float>(t.value(r, c));
    }
  }
  w.put<std::uint64_t>(fnv1a64(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::byte>& bytes, const std::string& context) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t)) throw FormatError(context + ": file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError(context + ": bad magic");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (fnv1a64(std::span<const std::byte>(bytes.data(), body)) != stored) {
    throw FormatError(context + ": checksum mismatch");
  }
  detail::ByteReader r(bytes.data(), body, context);
  r.take(sizeof(kMagic));
  Checkpoint ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.get_string(1u << 20));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(context + ": malformed header: " + e.what());
  }
  ckpt.model.config = header.at("model").get<ModelConfig>();
  ckpt.target_scale = header.value("target_scale", 100.0);
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_string(4096);
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    Mat<float> v(rows, cols);
    for (Index a = 0; a < rows; ++a) {
      for (Index b = 0; b < cols; ++b) v(a, b) = r.get<float>();
    }
    ckpt.model.params.add(name, std::move(v));
  }
  if (r.remaining() != 0) throw FormatError(context + ": trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  detail::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path), path); }

}  // namespace sipfuse
