#include "sipfuse/checksum.hpp"

namespace sipfuse {

void Fnv1a64::update(std::span<const std::byte> bytes) {
  constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  for (std::byte b : bytes) {
    state_ ^= static_cast<std::uint64_t>(b);
    state_ *= kPrime;
  }
}

void Fnv1a64::update(const void* data, std::size_t size) {
  update(std::span<const std::byte>(static_cast<const std::byte*>(data), size));
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes) {
  Fnv1a64 h;
  h.update(bytes);
  return h.digest();
}

}  // namespace sipfuse
