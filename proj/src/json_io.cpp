#include "hiergen/json_io.hpp"

#include <numeric>

#include "hiergen/error.hpp"

namespace hiergen {

RleMask rle_encode(const InstanceMask& mask, double threshold) {
  RleMask rle{mask.height(), mask.width(), {}};
  bool current = false;
  std::uint32_t run = 0;
  for (float v : mask.values()) {
    const bool on = v >= threshold;
    if (on != current) {
      rle.counts.push_back(run);
      run = 0;
      current = on;
    }
    ++run;
  }
  rle.counts.push_back(run);
  return rle;
}

InstanceMask rle_decode(const RleMask& rle) {
  const std::size_t total = static_cast<std::size_t>(rle.height) * rle.width;
  const std::size_t sum = std::accumulate(rle.counts.begin(), rle.counts.end(), std::size_t{0});
  if (sum != total) {
    throw Error(ErrorCode::kShapeMismatch, "RLE counts sum to " + std::to_string(sum) + ", expected " +
                                               std::to_string(total));
  }
  InstanceMask mask(rle.height, rle.width);
  auto values = mask.values();
  std::size_t pos = 0;
  float value = 0.0f;
  for (auto run : rle.counts) {
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(pos), run, value);
    pos += run;
    value = 1.0f - value;
  }
  return mask;
}

Json box_json(const BoxSpec& box) {
  Json j;
  j["x"] = box.x;
  j["y"] = box.y;
  j["w"] = box.w;
  j["h"] = box.h;
  j["label"] = box.label;
  return j;
}

Json layout_json(const LayoutSequence& layout) {
  Json j;
  j["classes"] = layout.class_names;
  Json boxes = Json::array();
  for (const auto& b : layout.boxes) boxes.push_back(box_json(b));
  j["boxes"] = std::move(boxes);
  return j;
}

namespace {

const Json& require(const Json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw Error(ErrorCode::kParse, "expected an object", path);
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(ErrorCode::kParse, std::string("missing field '") + key + "'", path + "." + key);
  return *it;
}

double number(const Json& obj, const char* key, const std::string& path) {
  const Json& v = require(obj, key, path);
  if (!v.is_number()) throw Error(ErrorCode::kParse, std::string("field '") + key + "' must be a number", path + "." + key);
  return v.get<double>();
}

}  // namespace

LayoutSequence parse_layout(const Json& value, const std::string& path) {
  LayoutSequence layout;
  const Json& classes = require(value, "classes", path);
  if (!classes.is_array()) throw Error(ErrorCode::kParse, "classes must be an array", path + ".classes");
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (!classes[k].is_string()) {
      throw Error(ErrorCode::kParse, "class names must be strings", path + ".classes[" + std::to_string(k) + "]");
    }
    layout.class_names.push_back(classes[k].get<std::string>());
  }
  const Json& boxes = require(value, "boxes", path);
  if (!boxes.is_array()) throw Error(ErrorCode::kParse, "boxes must be an array", path + ".boxes");
  for (std::size_t t = 0; t < boxes.size(); ++t) {
    const std::string bp = path + ".boxes[" + std::to_string(t) + "]";
    BoxSpec b;
    b.x = number(boxes[t], "x", bp);
    b.y = number(boxes[t], "y", bp);
    b.w = number(boxes[t], "w", bp);
    b.h = number(boxes[t], "h", bp);
    const Json& label = require(boxes[t], "label", bp);
    if (!label.is_number_integer()) throw Error(ErrorCode::kParse, "label must be an integer", bp + ".label");
    b.label = label.get<int>();
    layout.boxes.push_back(b);
  }
  return layout;
}

Json rle_json(const RleMask& rle) {
  Json j;
  j["height"] = rle.height;
  j["width"] = rle.width;
  j["counts"] = rle.counts;
  return j;
}

RleMask parse_rle(const Json& value, const std::string& path) {
  RleMask rle;
  rle.height = static_cast<int>(number(value, "height", path));
  rle.width = static_cast<int>(number(value, "width", path));
  const Json& counts = require(value, "counts", path);
  if (!counts.is_array()) throw Error(ErrorCode::kParse, "counts must be an array", path + ".counts");
  for (const auto& c : counts) {
    if (!c.is_number_unsigned() && !(c.is_number_integer() && c.get<long long>() >= 0)) {
      throw Error(ErrorCode::kParse, "counts must be non-negative integers", path + ".counts");
    }
    rle.counts.push_back(c.get<std::uint32_t>());
  }
  if (rle.height < 1 || rle.width < 1) throw Error(ErrorCode::kParse, "mask dimensions must be positive", path);
  return rle;
}

}  // namespace hiergen
