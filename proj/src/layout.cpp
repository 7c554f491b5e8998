#include "hiergen/layout.hpp"

#include <algorithm>
#include <cmath>

#include "hiergen/error.hpp"
#include "hiergen/json_io.hpp"

namespace hiergen {

LabelGrid::LabelGrid(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels) {
  if (height < 1 || width < 1 || channels < 1) {
    throw Error(ErrorCode::kInvalidArgument, "grid dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, 0);
}

std::size_t LabelGrid::count_nonzero() const {
  return static_cast<std::size_t>(std::count_if(data_.begin(), data_.end(), [](auto v) { return v != 0; }));
}

InstanceMask::InstanceMask(int height, int width, float fill) : height_(height), width_(width) {
  if (height < 1 || width < 1) throw Error(ErrorCode::kInvalidArgument, "mask dimensions must be positive");
  values_.assign(static_cast<std::size_t>(height) * width, fill);
}

InstanceMask::InstanceMask(int height, int width, std::vector<float> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height < 1 || width < 1) throw Error(ErrorCode::kInvalidArgument, "mask dimensions must be positive");
  if (values_.size() != static_cast<std::size_t>(height) * width) {
    throw Error(ErrorCode::kShapeMismatch, "mask value count does not match its dimensions");
  }
}

void validate_box(const BoxSpec& box, int num_classes, const std::string& path) {
  auto check = [&](double v, const char* field, bool ok) {
    if (!std::isfinite(v) || !ok) {
      throw Error(ErrorCode::kInvalidArgument, std::string("box coordinate out of range: ") + field,
                  path + "." + field);
    }
  };
  check(box.x, "x", box.x >= 0.0 && box.x <= 1.0);
  check(box.y, "y", box.y >= 0.0 && box.y <= 1.0);
  check(box.w, "w", box.w >= 0.0 && box.x + box.w <= 1.0);
  check(box.h, "h", box.h >= 0.0 && box.y + box.h <= 1.0);
  if (box.label < 0 || box.label >= num_classes) {
    throw Error(ErrorCode::kInvalidLabel,
                "label " + std::to_string(box.label) + " outside [0, " + std::to_string(num_classes) + ")",
                path + ".label");
  }
}

void validate_layout(const LayoutSequence& layout, const std::string& path) {
  if (layout.class_names.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "layout has no classes", path + ".classes");
  }
  for (std::size_t t = 0; t < layout.boxes.size(); ++t) {
    validate_box(layout.boxes[t], layout.num_classes(), path + ".boxes[" + std::to_string(t) + "]");
  }
}

BoxSpec clamp_box(BoxSpec box) {
  box.x = std::clamp(box.x, 0.0, 1.0);
  box.y = std::clamp(box.y, 0.0, 1.0);
  box.w = std::clamp(box.w, 0.0, 1.0 - box.x);
  box.h = std::clamp(box.h, 0.0, 1.0 - box.y);
  return box;
}

namespace {

// Half-open cell-index range [first, last) whose centers (c + 0.5) / n fall
// in [lo, lo + extent).
std::pair<int, int> covered_cells(double lo, double extent, int n) {
  const double hi = lo + extent;
  // center c satisfies lo <= (c + 0.5) / n < hi
  int first = static_cast<int>(std::ceil(lo * n - 0.5));
  int last = static_cast<int>(std::ceil(hi * n - 0.5));
  first = std::clamp(first, 0, n);
  last = std::clamp(last, 0, n);
  // Settle rounding at the boundaries against the exact center predicate.
  auto center = [n](int c) { return (c + 0.5) / n; };
  while (first > 0 && center(first - 1) >= lo) --first;
  while (first < n && center(first) < lo) ++first;
  while (last < n && center(last) < hi) ++last;
  while (last > 0 && center(last - 1) >= hi) --last;
  return {first, std::max(first, last)};
}

template <typename Fn>
void for_each_covered_cell(const BoxSpec& box, int height, int width, Fn&& fn) {
  auto [r0, r1] = covered_cells(box.y, box.h, height);
  auto [c0, c1] = covered_cells(box.x, box.w, width);
  if (r0 == r1 || c0 == c1) {
    // Degenerate box: keep the cell containing the origin.
    const int i = std::clamp(static_cast<int>(std::floor(box.y * height)), 0, height - 1);
    const int j = std::clamp(static_cast<int>(std::floor(box.x * width)), 0, width - 1);
    fn(i, j);
    return;
  }
  for (int i = r0; i < r1; ++i) {
    for (int j = c0; j < c1; ++j) fn(i, j);
  }
}

}  // namespace

BoxTensor tensorize_box(const BoxSpec& box, int height, int width, int num_classes) {
  if (box.label < 0 || box.label >= num_classes) {
    throw Error(ErrorCode::kInvalidLabel, "box label " + std::to_string(box.label) + " outside [0, " +
                                              std::to_string(num_classes) + ")");
  }
  BoxTensor grid(height, width, num_classes);
  for_each_covered_cell(box, height, width, [&](int i, int j) { grid.at(i, j, box.label) = 1; });
  return grid;
}

InstanceMask box_region(const BoxSpec& box, int height, int width) {
  InstanceMask region(height, width);
  for_each_covered_cell(box, height, width, [&](int i, int j) { region.at(i, j) = 1.0f; });
  return region;
}

BoxTensor aggregate_box_tensors(std::span<const BoxTensor> tensors) {
  if (tensors.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot aggregate an empty tensor list");
  BoxTensor result = tensors.front();
  for (const auto& t : tensors.subspan(1)) {
    if (!t.same_shape(result)) throw Error(ErrorCode::kShapeMismatch, "box tensor shapes differ");
    auto dst = result.data();
    auto src = t.data();
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] = std::max(dst[n], src[n]);
  }
  return result;
}

InstanceMask aggregate_masks(std::span<const InstanceMask> masks) {
  if (masks.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot aggregate an empty mask list");
  InstanceMask result = masks.front();
  for (const auto& m : masks.subspan(1)) {
    if (!m.same_shape(result)) throw Error(ErrorCode::kShapeMismatch, "mask shapes differ");
    auto dst = result.values();
    auto src = m.values();
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] += src[n];
  }
  return result;
}

SemanticLabelMap compose_label_map(std::span<const InstanceMask> masks, std::span<const int> labels,
                                   int num_classes, double threshold) {
  if (masks.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "grid size is needed to compose an empty label map");
  }
  return compose_label_map(masks, labels, num_classes, masks.front().height(), masks.front().width(),
                           threshold);
}

SemanticLabelMap compose_label_map(std::span<const InstanceMask> masks, std::span<const int> labels,
                                   int num_classes, int height, int width, double threshold) {
  if (masks.size() != labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, "masks and labels have different lengths");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "threshold must lie in (0, 1)");
  }
  SemanticLabelMap map(height, width, num_classes);
  for (std::size_t t = 0; t < masks.size(); ++t) {
    const int k = labels[t];
    if (k < 0 || k >= num_classes) {
      throw Error(ErrorCode::kInvalidLabel, "instance label " + std::to_string(k) + " out of range");
    }
    const auto& m = masks[t];
    if (m.height() != height || m.width() != width) {
      throw Error(ErrorCode::kShapeMismatch, "mask shape differs from label map grid");
    }
    for (int i = 0; i < height; ++i) {
      for (int j = 0; j < width; ++j) {
        if (m.at(i, j) >= threshold) map.at(i, j, k) = 1;
      }
    }
  }
  return map;
}

namespace {

const BoxSpec& box_at(const LayoutSequence& layout, std::size_t index) {
  if (index >= layout.boxes.size()) {
    throw Error(ErrorCode::kOutOfRange, "edit index " + std::to_string(index) + " out of range for " +
                                            std::to_string(layout.boxes.size()) + " boxes");
  }
  return layout.boxes[index];
}

void check_label(const LayoutSequence& layout, int label) {
  if (label < 0 || (!layout.class_names.empty() && label >= layout.num_classes())) {
    throw Error(ErrorCode::kInvalidLabel, "label " + std::to_string(label) + " out of range");
  }
}

}  // namespace

LayoutSequence apply_layout_edit(const LayoutSequence& layout, const LayoutEdit& edit) {
  LayoutSequence out = layout;
  std::visit(
      [&](const auto& e) {
        using E = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<E, edit::Add>) {
          check_label(layout, e.box.label);
          out.boxes.push_back(clamp_box(e.box));
        } else if constexpr (std::is_same_v<E, edit::Remove>) {
          box_at(layout, e.index);
          out.boxes.erase(out.boxes.begin() + static_cast<std::ptrdiff_t>(e.index));
        } else if constexpr (std::is_same_v<E, edit::Move>) {
          BoxSpec b = box_at(layout, e.index);
          // Size is preserved; the corner is clamped so the box stays inside.
          b.x = std::clamp(b.x + e.dx, 0.0, std::max(0.0, 1.0 - b.w));
          b.y = std::clamp(b.y + e.dy, 0.0, std::max(0.0, 1.0 - b.h));
          out.boxes[e.index] = clamp_box(b);
        } else if constexpr (std::is_same_v<E, edit::Resize>) {
          BoxSpec b = box_at(layout, e.index);
          b.w += e.dw;
          b.h += e.dh;
          out.boxes[e.index] = clamp_box(b);
        } else {
          box_at(layout, e.index);
          check_label(layout, e.label);
          out.boxes[e.index].label = e.label;
        }
      },
      edit);
  return out;
}

std::string layout_to_json(const LayoutSequence& layout) { return layout_json(layout).dump(); }

LayoutSequence layout_from_json(const std::string& text) {
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("layout JSON: ") + e.what());
  }
  return parse_layout(value);
}

}  // namespace hiergen
