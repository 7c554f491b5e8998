#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hiergen/shapeworld.hpp"

namespace hiergen {

struct CocoLoadConfig {
  int image_size = 64;
  // Directory holding the files named by images[].file_name. Without it the
  // examples carry a blank image.
  std::optional<std::filesystem::path> image_root;
};

struct CocoDataset {
  std::vector<std::string> class_names;  // categories sorted by id
  std::vector<DatasetExample> examples;
  std::size_t skipped_records = 0;
};

// Reads COCO-style instances + captions JSON. Images are center-cropped then
// resized; polygons are rasterized at cell centers on the image grid.
CocoDataset load_coco_format(const std::filesystem::path& instances_path, const std::filesystem::path& captions_path,
                             const CocoLoadConfig& config);

}  // namespace hiergen
