// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/rng.hpp"

namespace dreamvox {

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t hash) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ull;
  }
  return hash;
}

// splitmix64 finalizer
std::uint64_t Rng::mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Rng Rng::split(std::string_view stream, std::uint64_t index) const {
  const std::uint64_t name = fnv1a64(stream.data(), stream.size());
  return Rng(mix(seed_ ^ mix(name ^ mix(index))));
}

}  // namespace dreamvox
