#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace dlsh {

/// Incremental 64-bit FNV-1a. Used for family fingerprints and token hashing.
class Fnv1a {
 public:
  Fnv1a& update(const void* data, std::size_t size);
  Fnv1a& update(std::string_view text) { return update(text.data(), text.size()); }
  template <typename T>
  Fnv1a& update_pod(const T& value) {
    return update(&value, sizeof(T));
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a(std::string_view text);

/// Hex digest of an arbitrary byte string.
std::string digest_hex(std::string_view bytes);

}  // namespace dlsh
