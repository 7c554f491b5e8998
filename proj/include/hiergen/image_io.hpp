#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hiergen {

// 3-channel image with values in [-1, 1], stored channel-major (c, i, j).
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }
  float at(int c, int i, int j) const { return data_[index(c, i, j)]; }
  float& at(int c, int i, int j) { return data_[index(c, i, j)]; }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  bool operator==(const RgbImage&) const = default;

 private:
  std::size_t index(int c, int i, int j) const {
    return (static_cast<std::size_t>(c) * height_ + i) * width_ + j;
  }
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);
RgbImage read_jpeg(const std::filesystem::path& path);
// Dispatches on the file extension.
RgbImage read_image(const std::filesystem::path& path);

// Center square crop followed by bilinear resize to size x size.
RgbImage center_crop_resize(const RgbImage& image, int size);

std::string base64_encode(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace hiergen
