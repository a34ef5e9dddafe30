#include "binary_io.hpp"
#include "sipfuse/checksum.hpp"
#include "sipfuse/data.hpp"
#include "sipfuse/errors.hpp"

#include <cmath>
#include <cstring>

namespace sipfuse {

namespace {
constexpr char kMagic[8] = {'F', 'C', 'A', 'C', 'H', 'E', '0', '1'};
constexpr std::size_t kMaxIdLength = 4096;
}  // namespace

std::string_view to_string(Backbone b) { return b == Backbone::canary ? "canary" : "wavlm"; }
std::string_view to_string(Ear e) { return e == Ear::left ? "L" : "R"; }

std::vector<std::byte> encode_cache(const std::vector<CacheRecord>& records) {
  detail::ByteWriter w;
  w.put_bytes(kMagic, sizeof(kMagic));
  std::vector<std::uint64_t> offsets;
  offsets.reserve(records.size());
  for (const CacheRecord& rec : records) {
    if (rec.frames.rows() < 1 || rec.frames.cols() < 1) {
      throw DataError("cache record '" + rec.utterance_id + "': empty frame matrix");
    }
    if (!rec.frames.allFinite()) throw DataError("cache record '" + rec.utterance_id + "': non-finite values");
    if (rec.utterance_id.size() > kMaxIdLength) throw DataError("cache record id too long");
    const std::size_t start = w.size();
    offsets.push_back(start);
    w.put_string(rec.utterance_id);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(rec.ear));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(rec.backbone));
    w.put<double>(rec.frame_rate_hz);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(rec.frames.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(rec.frames.cols()));
    for (Index t = 0; t < rec.frames.rows(); ++t) {
      for (Index c = 0; c < rec.frames.cols(); ++c) w.put<float>(rec.frames(t, c));
    }
    const std::uint64_t sum = fnv1a64(std::span<const std::byte>(w.bytes().data() + start, w.size() - start));
    w.put<std::uint64_t>(sum);
  }
  const std::size_t index_offset = w.size();
  w.put<std::uint64_t>(offsets.size());
  for (auto off : offsets) w.put<std::uint64_t>(off);
  const std::uint64_t index_sum =
      fnv1a64(std::span<const std::byte>(w.bytes().data() + index_offset, w.size() - index_offset));
  w.put<std::uint64_t>(index_sum);
  w.put<std::uint64_t>(index_offset);
  return std::move(w.bytes());
}

std::vector<CacheRecord> decode_cache(const std::vector<std::byte>& bytes, const std::string& context) {
  if (bytes.size() < sizeof(kMagic)) throw FormatError(context + ": file too short for FCACHE01 header");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError(context + ": bad magic");
  if (bytes.size() < sizeof(kMagic) + 3 * sizeof(std::uint64_t)) throw FormatError(context + ": truncated index");

  std::uint64_t index_offset;
  std::memcpy(&index_offset, bytes.data() + bytes.size() - sizeof(std::uint64_t), sizeof(index_offset));
  const std::size_t body_end = bytes.size() - sizeof(std::uint64_t);
  if (index_offset < sizeof(kMagic) || index_offset > body_end) {
    throw FormatError(context + ": index offset out of range");
  }

  std::vector<CacheRecord> records;
  std::vector<std::uint64_t> offsets;
  detail::ByteReader r(bytes.data(), static_cast<std::size_t>(index_offset), context);
  r.seek(sizeof(kMagic));
  while (r.pos() < index_offset) {
    const std::size_t start = r.pos();
    const std::string where = context + ": record #" + std::to_string(records.size());
    r.set_context(where);
    CacheRecord rec;
    rec.utterance_id = r.get_string(kMaxIdLength);
    const std::string named = where + " ('" + rec.utterance_id + "')";
    r.set_context(named);
    const auto ear = r.get<std::uint8_t>();
    const auto backbone = r.get<std::uint8_t>();
    rec.frame_rate_hz = r.get<double>();
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    const std::uint64_t payload = static_cast<std::uint64_t>(rows) * cols * sizeof(float);
    if (payload > r.remaining()) throw FormatError(named + ": truncated payload");
    const std::byte* data = r.take(static_cast<std::size_t>(payload));
    const std::size_t end = r.pos();
    const auto stored = r.get<std::uint64_t>();
    if (fnv1a64(std::span<const std::byte>(bytes.data() + start, end - start)) != stored) {
      throw FormatError(named + ": checksum mismatch");
    }
    if (ear > 1 || backbone > 1) throw FormatError(named + ": invalid ear/backbone code");
    if (rows < 1 || cols < 1) throw FormatError(named + ": empty frame matrix");
    rec.ear = static_cast<Ear>(ear);
    rec.backbone = static_cast<Backbone>(backbone);
    rec.frames.resize(rows, cols);
    for (Index t = 0; t < rows; ++t) {
      for (Index c = 0; c < cols; ++c) {
        std::memcpy(&rec.frames(t, c), data + (static_cast<std::size_t>(t) * cols + c) * sizeof(float), sizeof(float));
      }
    }
    offsets.push_back(start);
    records.push_back(std::move(rec));
  }
  if (r.pos() != index_offset) throw FormatError(context + ": last record overruns the index");

  detail::ByteReader idx(bytes.data(), body_end, context + ": index");
  idx.seek(static_cast<std::size_t>(index_offset));
  const auto count = idx.get<std::uint64_t>();
  if (count != offsets.size()) {
    throw FormatError(context + ": index lists " + std::to_string(count) + " records, found " +
                      std::to_string(offsets.size()));
  }
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (idx.get<std::uint64_t>() != offsets[i]) {
      throw FormatError(context + ": index offset mismatch for record #" + std::to_string(i) + " ('" +
                        records[i].utterance_id + "')");
    }
  }
  const std::size_t index_end = idx.pos();
  const auto index_sum = idx.get<std::uint64_t>();
  if (fnv1a64(std::span<const std::byte>(bytes.data() + index_offset, index_end - index_offset)) != index_sum) {
    throw FormatError(context + ": index checksum mismatch");
  }
  if (idx.pos() != body_end) throw FormatError(context + ": trailing bytes after index");
  return records;
}

void write_cache(const std::string& path, const std::vector<CacheRecord>& records) {
  detail::write_file_atomic(path, encode_cache(records));
}

std::vector<CacheRecord> read_cache(const std::string& path) { return decode_cache(detail::read_file(path), path); }

}  // namespace sipfuse
