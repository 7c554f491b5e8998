#include "hiergen/coco.hpp"

#include <algorithm>
#include <map>

#include "hiergen/error.hpp"
#include "hiergen/json_io.hpp"
#include "hiergen/log.hpp"

namespace hiergen {

namespace {

Json read_json(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

using Polygon = std::vector<std::pair<double, double>>;

bool point_in_polygon(const Polygon& poly, double px, double py) {
  bool inside = false;
  for (std::size_t a = 0, b = poly.size() - 1; a < poly.size(); b = a++) {
    const auto [xa, ya] = poly[a];
    const auto [xb, yb] = poly[b];
    if ((ya > py) != (yb > py) && px < (xb - xa) * (py - ya) / (yb - ya) + xa) inside = !inside;
  }
  return inside;
}

struct Instance {
  BoxSpec box;
  InstanceMask mask;
};

// Returns nullopt for an annotation that should be dropped without failing the
// record (crowd regions, instances cropped away); throws on malformed input.
std::optional<Instance> convert_annotation(const Json& ann, const std::map<long long, int>& labels, double left,
                                           double top, double side, int n) {
  if (ann.value("iscrowd", 0) == 1) return std::nullopt;
  const auto cat = labels.find(ann.at("category_id").get<long long>());
  if (cat == labels.end()) throw Error(ErrorCode::kParse, "unknown category id");
  const auto& bbox = ann.at("bbox");
  if (!bbox.is_array() || bbox.size() != 4) throw Error(ErrorCode::kParse, "bbox must have 4 numbers");
  const auto& seg = ann.at("segmentation");
  if (!seg.is_array() || seg.empty()) throw Error(ErrorCode::kParse, "segmentation must be a polygon list");
  std::vector<Polygon> polygons;
  for (const auto& flat : seg) {
    if (!flat.is_array() || flat.size() < 6 || flat.size() % 2 != 0) {
      throw Error(ErrorCode::kParse, "polygon needs an even number (>= 6) of coordinates");
    }
    Polygon poly;
    for (std::size_t k = 0; k < flat.size(); k += 2) poly.emplace_back(flat[k].get<double>(), flat[k + 1].get<double>());
    polygons.push_back(std::move(poly));
  }

  const double bx = bbox[0].get<double>(), by = bbox[1].get<double>();
  const double bw = bbox[2].get<double>(), bh = bbox[3].get<double>();
  const double x0 = std::clamp((bx - left) / side, 0.0, 1.0);
  const double y0 = std::clamp((by - top) / side, 0.0, 1.0);
  const double x1 = std::clamp((bx + bw - left) / side, 0.0, 1.0);
  const double y1 = std::clamp((by + bh - top) / side, 0.0, 1.0);
  if (x1 <= x0 || y1 <= y0) return std::nullopt;

  Instance inst{BoxSpec{x0, y0, x1 - x0, y1 - y0, cat->second}, InstanceMask(n, n)};
  for (int i = 0; i < n; ++i) {
    const double py = top + (i + 0.5) * side / n;
    for (int j = 0; j < n; ++j) {
      const double px = left + (j + 0.5) * side / n;
      for (const auto& poly : polygons) {
        if (point_in_polygon(poly, px, py)) {
          inst.mask.at(i, j) = 1.0f;
          break;
        }
      }
    }
  }
  return inst;
}

}  // namespace

CocoDataset load_coco_format(const std::filesystem::path& instances_path, const std::filesystem::path& captions_path,
                             const CocoLoadConfig& config) {
  const Json instances = read_json(instances_path);
  const Json captions = read_json(captions_path);
  const int n = config.image_size;

  CocoDataset out;
  std::vector<std::pair<long long, std::string>> cats;
  for (const auto& c : instances.at("categories")) cats.emplace_back(c.at("id").get<long long>(), c.at("name").get<std::string>());
  std::sort(cats.begin(), cats.end());
  std::map<long long, int> labels;
  for (const auto& [id, name] : cats) {
    labels[id] = static_cast<int>(out.class_names.size());
    out.class_names.push_back(name);
  }

  std::map<long long, std::vector<std::string>> caption_map;
  for (const auto& a : captions.at("annotations")) {
    caption_map[a.at("image_id").get<long long>()].push_back(a.at("caption").get<std::string>());
  }
  std::map<long long, std::vector<const Json*>> ann_map;
  for (const auto& a : instances.at("annotations")) ann_map[a.at("image_id").get<long long>()].push_back(&a);

  std::vector<const Json*> images;
  for (const auto& img : instances.at("images")) images.push_back(&img);
  std::sort(images.begin(), images.end(),
            [](const Json* a, const Json* b) { return a->at("id").get<long long>() < b->at("id").get<long long>(); });

  bool warned_blank = false;
  for (const Json* img : images) {
    const long long id = img->at("id").get<long long>();
    auto skip = [&](const std::string& why) {
      log::warn("skipping COCO image ", id, ": ", why);
      ++out.skipped_records;
    };
    const auto cap = caption_map.find(id);
    if (cap == caption_map.end() || cap->second.empty()) {
      skip("no caption");
      continue;
    }
    const double width = img->at("width").get<double>();
    const double height = img->at("height").get<double>();
    const double side = std::min(width, height);
    const double left = (width - side) / 2.0;
    const double top = (height - side) / 2.0;

    DatasetExample ex;
    ex.captions = cap->second;
    ex.layout.class_names = out.class_names;
    bool malformed = false;
    try {
      for (const Json* ann : ann_map[id]) {
        if (auto inst = convert_annotation(*ann, labels, left, top, side, n)) {
          ex.layout.boxes.push_back(inst->box);
          ex.instance_masks.push_back(std::move(inst->mask));
        }
      }
    } catch (const std::exception& e) {
      skip(std::string("malformed annotation: ") + e.what());
      malformed = true;
    }
    if (malformed) continue;
    if (ex.layout.boxes.empty()) {
      skip("no instances");
      continue;
    }
    order_instances(ex.layout, ex.instance_masks);

    if (config.image_root) {
      ex.image = center_crop_resize(read_image(*config.image_root / img->at("file_name").get<std::string>()), n);
    } else {
      if (!warned_blank) log::warn("no image root given; COCO examples carry blank images");
      warned_blank = true;
      ex.image = RgbImage(n, n);
    }
    out.examples.push_back(std::move(ex));
  }
  return out;
}

}  // namespace hiergen
