#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

namespace sanet {

inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 14695981039346656037ull) {
  const unsigned char* p = (const unsigned char*)bytes;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for hashing: " + path);
  uint64_t h = 14695981039346656037ull;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    h = fnv1a64(buf, (size_t)f.gcount(), h);
  }
  return h;
}

}  // namespace sanet
