#pragma once

// JSON encodings of the layout wire types. Key order is canonical, so the
// ordered variant of nlohmann::json is used throughout.

#include <string>
#include <vector>

#include "json.hpp"

#include "hiergen/layout.hpp"

namespace hiergen {

using Json = nlohmann::ordered_json;

// Row-major run-length encoding of a binarized mask. Runs alternate between
// 0 and 1 and always start with a (possibly empty) run of zeros.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  bool operator==(const RleMask&) const = default;
};

RleMask rle_encode(const InstanceMask& mask, double threshold = kDefaultMaskThreshold);
InstanceMask rle_decode(const RleMask& rle);

Json layout_json(const LayoutSequence& layout);
Json box_json(const BoxSpec& box);
// Structural parse; reports the failing field path. Range checks are left to
// validate_layout.
LayoutSequence parse_layout(const Json& value, const std::string& path = "layout");

Json rle_json(const RleMask& rle);
RleMask parse_rle(const Json& value, const std::string& path = "mask");

}  // namespace hiergen
