#pragma once

// Little-endian byte buffer helpers shared by the cache and checkpoint codecs.

#include "sipfuse/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

namespace sipfuse::detail {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::byte*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  [[nodiscard]] std::size_t size() const { return buf_.size(); }
  [[nodiscard]] const std::vector<std::byte>& bytes() const { return buf_; }
  [[nodiscard]] std::vector<std::byte>& bytes() { return buf_; }

 private:
  std::vector<std::byte> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::byte* data, std::size_t size, std::string context)
      : data_(data), size_(size), context_(std::move(context)) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::byte* take(std::size_t n) {
    if (n > size_ - pos_) throw FormatError(context_ + ": truncated at byte " + std::to_string(pos_));
    const std::byte* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::string get_string(std::size_t max_len) {
    const auto n = get<std::uint32_t>();
    if (n > max_len) throw FormatError(context_ + ": string length " + std::to_string(n) + " exceeds limit");
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  [[nodiscard]] std::size_t pos() const { return pos_; }
  void seek(std::size_t p) {
    if (p > size_) throw FormatError(context_ + ": offset out of range");
    pos_ = p;
  }
  [[nodiscard]] std::size_t remaining() const { return size_ - pos_; }
  void set_context(std::string c) { context_ = std::move(c); }
  [[nodiscard]] const std::string& context() const { return context_; }

 private:
  const std::byte* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::vector<std::byte> read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::vector<std::byte>& bytes);

}  // namespace sipfuse::detail
