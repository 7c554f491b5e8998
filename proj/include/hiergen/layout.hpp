#pragma once

// Layout data model shared by every generator stage: labeled boxes, their
// binary rasterizations, instance masks and the composed semantic label map.
//
// Coordinates are normalized to [0, 1] with (x, y) the top-left corner of the
// box; grids are stored channel-major (k, i, j) so they map directly onto
// CHW tensors.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace hiergen {

struct BoxSpec {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  int label = 0;

  bool operator==(const BoxSpec&) const = default;
};

struct LayoutSequence {
  std::vector<BoxSpec> boxes;
  std::vector<std::string> class_names;

  std::size_t size() const { return boxes.size(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
  bool operator==(const LayoutSequence&) const = default;
};

// H x W x L binary grid. Used both for single-box tensors and for the
// semantic label map.
class LabelGrid {
 public:
  LabelGrid() = default;
  LabelGrid(int height, int width, int channels);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  bool same_shape(const LabelGrid& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  std::uint8_t at(int i, int j, int k) const { return data_[index(i, j, k)]; }
  std::uint8_t& at(int i, int j, int k) { return data_[index(i, j, k)]; }
  std::span<const std::uint8_t> data() const { return data_; }
  std::span<std::uint8_t> data() { return data_; }
  std::size_t count_nonzero() const;

  bool operator==(const LabelGrid&) const = default;

 private:
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * height_ + i) * width_ + j;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

using BoxTensor = LabelGrid;
using SemanticLabelMap = LabelGrid;

// Per-instance H x W map with values in [0, 1]; also used (unbounded) for
// summed masks.
class InstanceMask {
 public:
  InstanceMask() = default;
  InstanceMask(int height, int width, float fill = 0.0f);
  InstanceMask(int height, int width, std::vector<float> values);

  int height() const { return height_; }
  int width() const { return width_; }
  bool same_shape(const InstanceMask& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }
  float at(int i, int j) const { return values_[static_cast<std::size_t>(i) * width_ + j]; }
  float& at(int i, int j) { return values_[static_cast<std::size_t>(i) * width_ + j]; }
  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

  bool operator==(const InstanceMask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

inline constexpr double kDefaultMaskThreshold = 0.5;

// Throws Error(kInvalidArgument / kInvalidLabel) with a field path rooted at
// `path` when the box violates the coordinate or label invariants.
void validate_box(const BoxSpec& box, int num_classes, const std::string& path = "box");
void validate_layout(const LayoutSequence& layout, const std::string& path = "layout");

// Clamps coordinates into the unit square: x, y to [0, 1], then w, h so the box
// stays inside the image.
BoxSpec clamp_box(BoxSpec box);

BoxTensor tensorize_box(const BoxSpec& box, int height, int width, int num_classes);
BoxTensor aggregate_box_tensors(std::span<const BoxTensor> tensors);
InstanceMask aggregate_masks(std::span<const InstanceMask> masks);
SemanticLabelMap compose_label_map(std::span<const InstanceMask> masks, std::span<const int> labels,
                                   int num_classes, double threshold = kDefaultMaskThreshold);
SemanticLabelMap compose_label_map(std::span<const InstanceMask> masks, std::span<const int> labels,
                                   int num_classes, int height, int width,
                                   double threshold = kDefaultMaskThreshold);

// Binary H x W map of the cells covered by the box (channel-summed box tensor).
InstanceMask box_region(const BoxSpec& box, int height, int width);

namespace edit {
struct Add {
  BoxSpec box;
};
struct Remove {
  std::size_t index = 0;
};
struct Move {
  std::size_t index = 0;
  double dx = 0.0;
  double dy = 0.0;
};
struct Resize {
  std::size_t index = 0;
  double dw = 0.0;
  double dh = 0.0;
};
struct Relabel {
  std::size_t index = 0;
  int label = 0;
};
}  // namespace edit

using LayoutEdit = std::variant<edit::Add, edit::Remove, edit::Move, edit::Resize, edit::Relabel>;

LayoutSequence apply_layout_edit(const LayoutSequence& layout, const LayoutEdit& edit);

// Canonical wire format: {"classes": [...], "boxes": [{"x","y","w","h","label"}...]}.
std::string layout_to_json(const LayoutSequence& layout);
LayoutSequence layout_from_json(const std::string& text);

}  // namespace hiergen
