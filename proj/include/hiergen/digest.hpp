#pragma once

#include <span>
#include <string>
#include <string_view>

namespace hiergen {

// Incremental SHA-256, hex-encoded on finish.
class Digest {
 public:
  Digest();
  ~Digest();
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  void update(std::span<const unsigned char> bytes);
  void update(std::string_view text);
  std::string hex();

 private:
  struct Impl;
  Impl* impl_;
};

std::string sha256_hex(std::string_view bytes);

}  // namespace hiergen
