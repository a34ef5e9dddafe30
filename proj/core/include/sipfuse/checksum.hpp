#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace sipfuse {

/// Incremental 64-bit FNV-1a. Every step is a bijection of the state, so any
/// single-byte change in the input changes the digest.
class Fnv1a64 {
 public:
  void update(std::span<const std::byte> bytes);
  void update(const void* data, std::size_t size);
  [[nodiscard]] std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a64(std::span<const std::byte> bytes);

}  // namespace sipfuse
