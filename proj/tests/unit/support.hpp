#pragma once

// Shared helpers: error-code capture, temp dirs, random boxes.

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include <unistd.h>

#include "hiergen/error.hpp"
#include "hiergen/layout.hpp"

namespace testing {

inline std::optional<hiergen::ErrorCode> error_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const hiergen::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline std::string error_field(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const hiergen::Error& e) {
    return e.field_path();
  }
  return {};
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("hiergen_test_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline hiergen::BoxSpec random_box(std::mt19937_64& gen, int num_classes, bool allow_degenerate = true) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  hiergen::BoxSpec b;
  b.x = u(gen);
  b.y = u(gen);
  b.w = u(gen) * (1.0 - b.x);
  b.h = u(gen) * (1.0 - b.y);
  if (allow_degenerate && u(gen) < 0.05) b.w = 0.0;
  if (allow_degenerate && u(gen) < 0.05) b.h = 0.0;
  b.label = std::uniform_int_distribution<int>(0, num_classes - 1)(gen);
  return b;
}

}  // namespace testing

// torch's logging header defines its own CHECK; doctest's is the one used here.
#ifdef CHECK
#undef CHECK
#endif
