#include "dlsh/digest.hpp"

#include <cstdio>

namespace dlsh {

Fnv1a& Fnv1a::update(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state_ ^= bytes[i];
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

std::uint64_t fnv1a(std::string_view text) { return Fnv1a{}.update(text).value(); }

std::string digest_hex(std::string_view bytes) { return Fnv1a{}.update(bytes).hex(); }

}  // namespace dlsh
