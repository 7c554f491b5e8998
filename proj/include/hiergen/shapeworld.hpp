#pragma once

// Procedural caption + layout + image dataset ("shape-world") and the shared
// DatasetExample record. Every example is a pure function of (seed, index).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hiergen/image_io.hpp"
#include "hiergen/layout.hpp"

namespace hiergen {

struct DatasetExample {
  RgbImage image;
  std::vector<std::string> captions;
  LayoutSequence layout;
  std::vector<InstanceMask> instance_masks;
};

struct ShapeWorldConfig {
  int image_size = 64;
  int max_objects = 4;
  int num_classes = 6;
  std::vector<std::string> palette = {"red", "green", "blue", "yellow"};
  int grammar = 1;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
};

enum class Split { kTrain, kVal };

// Names of all shape classes, in label order; a config uses the first
// num_classes entries.
const std::vector<std::string>& shape_class_names();
std::vector<std::string> class_names(const ShapeWorldConfig& config);
void validate(const ShapeWorldConfig& config);

// Symbolic scene before rendering; boxes ordered left to right.
struct Scene {
  LayoutSequence layout;
  std::vector<std::string> colors;  // aligned with layout.boxes
  std::string background_tone;      // "light" or "dark"
  std::string background_kind;      // "plain" or "striped"
};

Scene sample_scene(const ShapeWorldConfig& config, std::uint64_t index);
std::vector<std::string> scene_captions(const Scene& scene);
DatasetExample render_scene(const ShapeWorldConfig& config, const Scene& scene);
DatasetExample generate_shapeworld(const ShapeWorldConfig& config, std::uint64_t index);
Split split_of(const ShapeWorldConfig& config, std::uint64_t index);
// First `count` indices (ascending) that fall into `split`.
std::vector<std::uint64_t> split_indices(const ShapeWorldConfig& config, Split split, std::size_t count);

// Stable left-to-right permutation: x, then y, then label.
std::vector<std::size_t> instance_order(const LayoutSequence& layout);
void order_instances(LayoutSequence& layout, std::vector<InstanceMask>& masks);

// One clause of a caption: "two red circles on the left".
struct CaptionFact {
  int count = 0;
  std::string color;
  int label = 0;
  std::string position;  // "left", "middle" or "right"

  bool operator==(const CaptionFact&) const = default;
};

struct CaptionParse {
  std::vector<CaptionFact> facts;
  std::string background;  // e.g. "dark striped"
};

std::string horizontal_position(const BoxSpec& box);
// Facts implied by a layout and its object colors (aligned with boxes).
std::vector<CaptionFact> layout_facts(const LayoutSequence& layout, const std::vector<std::string>& colors);
// Inverse of the caption grammar; nullopt when the text is not a grammar sentence.
std::optional<CaptionParse> parse_caption(const std::string& caption, const ShapeWorldConfig& config);

// Hash over the serialized bytes of every example in [0, count).
std::string dataset_digest(const ShapeWorldConfig& config, std::size_t count);
std::string example_digest(const DatasetExample& example);

// Per-example persistence: NNNNNN.png + NNNNNN.json (layout, RLE masks, captions).
void write_example(const std::filesystem::path& dir, std::uint64_t index, const DatasetExample& example);
DatasetExample read_example(const std::filesystem::path& dir, std::uint64_t index);

// Writes examples [0, count) plus dataset.json (count, generator settings,
// dataset digest); returns the digest.
std::string write_shapeworld_dataset(const std::filesystem::path& dir, const ShapeWorldConfig& config,
                                     std::size_t count);
// Number of examples recorded in <dir>/dataset.json.
std::size_t dataset_size(const std::filesystem::path& dir);

}  // namespace hiergen
