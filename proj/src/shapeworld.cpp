#include "hiergen/shapeworld.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "hiergen/digest.hpp"
#include "hiergen/error.hpp"
#include "hiergen/json_io.hpp"
#include "hiergen/rng.hpp"

namespace hiergen {

namespace {

struct ShapeGeometry {
  double min_w;
  double max_w;
  double aspect;  // h / w
};

// Label order matches shape_class_names().
constexpr std::array<ShapeGeometry, 6> kGeometry = {{
    {0.18, 0.36, 1.0},   // circle
    {0.18, 0.36, 1.0},   // square
    {0.22, 0.40, 0.9},   // triangle
    {0.20, 0.32, 1.25},  // diamond
    {0.22, 0.40, 1.0},   // cross
    {0.32, 0.50, 0.35},  // bar
}};

struct Color {
  float r, g, b;
};

Color palette_color(const std::string& name) {
  if (name == "red") return {0.90f, 0.15f, 0.15f};
  if (name == "green") return {0.15f, 0.75f, 0.20f};
  if (name == "blue") return {0.15f, 0.30f, 0.90f};
  if (name == "yellow") return {0.95f, 0.85f, 0.10f};
  if (name == "white") return {0.97f, 0.97f, 0.97f};
  if (name == "purple") return {0.60f, 0.20f, 0.75f};
  if (name == "orange") return {0.98f, 0.55f, 0.10f};
  throw Error(ErrorCode::kInvalidArgument, "unknown palette color: " + name);
}

const std::array<const char*, 10> kCountWords = {"zero", "a", "two", "three", "four",
                                                 "five", "six", "seven", "eight", "nine"};

std::string plural(const std::string& noun) {
  if (noun.ends_with("s") || noun.ends_with("x")) return noun + "es";
  return noun + "s";
}

// Point-in-shape test in box-relative coordinates u, v in [0, 1).
bool inside_shape(int label, double u, double v) {
  switch (label) {
    case 0: return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25;
    case 1: return true;
    case 2: return std::abs(u - 0.5) <= 0.5 * v;
    case 3: return std::abs(u - 0.5) + std::abs(v - 0.5) <= 0.5;
    case 4: return std::abs(u - 0.5) <= 1.0 / 6.0 || std::abs(v - 0.5) <= 1.0 / 6.0;
    default: return true;
  }
}

double overlap_area(const BoxSpec& a, const BoxSpec& b) {
  const double w = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double h = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

}  // namespace

const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names = {"circle", "square", "triangle", "diamond", "cross", "bar"};
  return names;
}

std::vector<std::string> class_names(const ShapeWorldConfig& config) {
  validate(config);
  const auto& all = shape_class_names();
  return {all.begin(), all.begin() + config.num_classes};
}

void validate(const ShapeWorldConfig& config) {
  if (config.max_objects < 1 || config.max_objects >= static_cast<int>(kCountWords.size())) {
    throw Error(ErrorCode::kInvalidArgument, "max_objects must lie in [1, 9]");
  }
  if (config.num_classes < 2 || config.num_classes > static_cast<int>(kGeometry.size())) {
    throw Error(ErrorCode::kInvalidArgument, "num_classes must lie in [2, 6]");
  }
  if (config.image_size < 8) throw Error(ErrorCode::kInvalidArgument, "image_size must be at least 8");
  if (config.palette.empty()) throw Error(ErrorCode::kInvalidArgument, "palette is empty");
  for (const auto& c : config.palette) palette_color(c);
  if (!(config.val_fraction > 0.0 && config.val_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "val_fraction must lie in (0, 1)");
  }
}

std::vector<std::size_t> instance_order(const LayoutSequence& layout) {
  std::vector<std::size_t> order(layout.boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ba = layout.boxes[a];
    const auto& bb = layout.boxes[b];
    if (ba.x != bb.x) return ba.x < bb.x;
    if (ba.y != bb.y) return ba.y < bb.y;
    return ba.label < bb.label;
  });
  return order;
}

void order_instances(LayoutSequence& layout, std::vector<InstanceMask>& masks) {
  if (layout.boxes.size() != masks.size()) {
    throw Error(ErrorCode::kShapeMismatch, "layout and mask lists have different lengths");
  }
  const auto order = instance_order(layout);
  std::vector<BoxSpec> boxes;
  std::vector<InstanceMask> sorted;
  boxes.reserve(order.size());
  sorted.reserve(order.size());
  for (auto idx : order) {
    boxes.push_back(layout.boxes[idx]);
    sorted.push_back(std::move(masks[idx]));
  }
  layout.boxes = std::move(boxes);
  masks = std::move(sorted);
}

Scene sample_scene(const ShapeWorldConfig& config, std::uint64_t index) {
  validate(config);
  Rng rng(mix_seed(config.seed, index, 0x5348415045ULL));
  Scene scene;
  scene.layout.class_names = class_names(config);
  scene.background_tone = rng.uniform() < 0.5 ? "light" : "dark";
  scene.background_kind = rng.uniform() < 0.5 ? "plain" : "striped";

  const auto target = rng.uniform_int(1, config.max_objects);
  std::vector<std::pair<BoxSpec, std::string>> objects;
  for (int attempt = 0; attempt < 60 && static_cast<std::int64_t>(objects.size()) < target; ++attempt) {
    BoxSpec box;
    box.label = static_cast<int>(rng.uniform_int(0, config.num_classes - 1));
    const auto& geo = kGeometry[static_cast<std::size_t>(box.label)];
    box.w = rng.uniform(geo.min_w, geo.max_w);
    box.h = std::min(0.6, box.w * geo.aspect);
    box.x = rng.uniform(0.0, 1.0 - box.w);
    box.y = rng.uniform(0.0, 1.0 - box.h);
    const auto color = config.palette[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(config.palette.size()) - 1))];
    const bool crowded = std::any_of(objects.begin(), objects.end(), [&](const auto& o) {
      return overlap_area(o.first, box) > 0.2 * std::min(o.first.w * o.first.h, box.w * box.h);
    });
    if (!crowded) objects.emplace_back(box, color);
  }
  for (const auto& [box, color] : objects) scene.layout.boxes.push_back(box);
  const auto order = instance_order(scene.layout);
  std::vector<BoxSpec> boxes;
  for (auto idx : order) {
    boxes.push_back(objects[idx].first);
    scene.colors.push_back(objects[idx].second);
  }
  scene.layout.boxes = std::move(boxes);
  return scene;
}

std::string horizontal_position(const BoxSpec& box) {
  const double cx = box.x + 0.5 * box.w;
  if (cx < 1.0 / 3.0) return "left";
  if (cx < 2.0 / 3.0) return "middle";
  return "right";
}

std::vector<CaptionFact> layout_facts(const LayoutSequence& layout, const std::vector<std::string>& colors) {
  if (colors.size() != layout.boxes.size()) {
    throw Error(ErrorCode::kShapeMismatch, "colors are not aligned with boxes");
  }
  std::vector<CaptionFact> facts;
  for (std::size_t t = 0; t < layout.boxes.size(); ++t) {
    CaptionFact key{1, colors[t], layout.boxes[t].label, horizontal_position(layout.boxes[t])};
    auto it = std::find_if(facts.begin(), facts.end(), [&](const CaptionFact& f) {
      return f.color == key.color && f.label == key.label && f.position == key.position;
    });
    if (it == facts.end()) {
      facts.push_back(key);
    } else {
      ++it->count;
    }
  }
  return facts;
}

namespace {

std::string fact_phrase(const CaptionFact& fact, const std::vector<std::string>& classes) {
  std::string noun = classes[static_cast<std::size_t>(fact.label)];
  if (fact.count > 1) noun = plural(noun);
  std::string where = fact.position == "middle" ? "in the middle" : "on the " + fact.position;
  return std::string(kCountWords[static_cast<std::size_t>(fact.count)]) + " " + fact.color + " " + noun + " " + where;
}

std::string join_facts(const std::vector<CaptionFact>& facts, const std::vector<std::string>& classes) {
  std::string out;
  for (std::size_t n = 0; n < facts.size(); ++n) {
    if (n) out += " and ";
    out += fact_phrase(facts[n], classes);
  }
  return out;
}

}  // namespace

std::vector<std::string> scene_captions(const Scene& scene) {
  const auto facts = layout_facts(scene.layout, scene.colors);
  const auto body = join_facts(facts, scene.layout.class_names);
  const auto background = scene.background_tone + " " + scene.background_kind + " background";
  return {body + " on a " + background, "a " + background + " with " + body};
}

DatasetExample render_scene(const ShapeWorldConfig& config, const Scene& scene) {
  const int n = config.image_size;
  DatasetExample ex;
  ex.layout = scene.layout;
  ex.captions = scene_captions(scene);
  ex.image = RgbImage(n, n);

  const bool dark = scene.background_tone == "dark";
  const Color base = dark ? Color{0.22f, 0.22f, 0.26f} : Color{0.80f, 0.80f, 0.76f};
  const Color stripe = dark ? Color{0.38f, 0.34f, 0.30f} : Color{0.62f, 0.66f, 0.70f};
  const int stripe_width = std::max(2, n / 16);
  for (int i = 0; i < n; ++i) {
    const bool alt = scene.background_kind == "striped" && (i / stripe_width) % 2 == 1;
    const Color c = alt ? stripe : base;
    for (int j = 0; j < n; ++j) {
      ex.image.at(0, i, j) = 2.0f * c.r - 1.0f;
      ex.image.at(1, i, j) = 2.0f * c.g - 1.0f;
      ex.image.at(2, i, j) = 2.0f * c.b - 1.0f;
    }
  }

  for (std::size_t t = 0; t < scene.layout.boxes.size(); ++t) {
    const auto& box = scene.layout.boxes[t];
    InstanceMask mask(n, n);
    const InstanceMask region = box_region(box, n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (region.at(i, j) == 0.0f) continue;
        const double u = ((j + 0.5) / n - box.x) / std::max(box.w, 1e-9);
        const double v = ((i + 0.5) / n - box.y) / std::max(box.h, 1e-9);
        if (inside_shape(box.label, u, v)) mask.at(i, j) = 1.0f;
      }
    }
    const Color c = palette_color(scene.colors[t]);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (mask.at(i, j) == 0.0f) continue;
        ex.image.at(0, i, j) = 2.0f * c.r - 1.0f;
        ex.image.at(1, i, j) = 2.0f * c.g - 1.0f;
        ex.image.at(2, i, j) = 2.0f * c.b - 1.0f;
      }
    }
    ex.instance_masks.push_back(std::move(mask));
  }
  // Snap to 8-bit levels so a PNG round trip is lossless.
  for (float& v : ex.image.data()) v = static_cast<float>(std::lround((v + 1.0f) * 127.5f)) / 127.5f - 1.0f;
  return ex;
}

DatasetExample generate_shapeworld(const ShapeWorldConfig& config, std::uint64_t index) {
  return render_scene(config, sample_scene(config, index));
}

Split split_of(const ShapeWorldConfig& config, std::uint64_t index) {
  const auto h = mix_seed(config.seed, index, 0x53504c4954ULL);
  return static_cast<double>(h % 1000000) < config.val_fraction * 1000000.0 ? Split::kVal : Split::kTrain;
}

std::vector<std::uint64_t> split_indices(const ShapeWorldConfig& config, Split split, std::size_t count) {
  std::vector<std::uint64_t> out;
  out.reserve(count);
  for (std::uint64_t index = 0; out.size() < count; ++index) {
    if (split_of(config, index) == split) out.push_back(index);
  }
  return out;
}

std::optional<CaptionParse> parse_caption(const std::string& caption, const ShapeWorldConfig& config) {
  std::istringstream is(caption);
  std::vector<std::string> tok;
  for (std::string w; is >> w;) tok.push_back(w);
  const auto classes = class_names(config);
  std::size_t p = 0;
  auto at = [&](std::size_t k) -> const std::string& {
    static const std::string empty;
    return k < tok.size() ? tok[k] : empty;
  };

  CaptionParse out;
  auto parse_background = [&]() -> bool {
    // <tone> <kind> background
    if (!(at(p) == "light" || at(p) == "dark")) return false;
    if (!(at(p + 1) == "plain" || at(p + 1) == "striped")) return false;
    if (at(p + 2) != "background") return false;
    out.background = at(p) + " " + at(p + 1);
    p += 3;
    return true;
  };
  auto parse_fact = [&]() -> std::optional<CaptionFact> {
    CaptionFact f;
    auto cw = std::find(kCountWords.begin(), kCountWords.end(), at(p));
    if (cw == kCountWords.end() || cw == kCountWords.begin()) return std::nullopt;
    f.count = static_cast<int>(cw - kCountWords.begin());
    if (std::find(config.palette.begin(), config.palette.end(), at(p + 1)) == config.palette.end()) return std::nullopt;
    f.color = at(p + 1);
    const std::string& noun = at(p + 2);
    bool found = false;
    for (std::size_t k = 0; k < classes.size(); ++k) {
      if (noun == (f.count == 1 ? classes[k] : plural(classes[k]))) {
        f.label = static_cast<int>(k);
        found = true;
      }
    }
    if (!found) return std::nullopt;
    if (at(p + 3) == "in" && at(p + 4) == "the" && at(p + 5) == "middle") {
      f.position = "middle";
    } else if (at(p + 3) == "on" && at(p + 4) == "the" && (at(p + 5) == "left" || at(p + 5) == "right")) {
      f.position = at(p + 5);
    } else {
      return std::nullopt;
    }
    p += 6;
    return f;
  };
  auto parse_facts = [&]() -> bool {
    for (;;) {
      auto f = parse_fact();
      if (!f) return false;
      out.facts.push_back(*f);
      if (at(p) != "and") return true;
      ++p;
    }
  };

  if (at(0) == "a" && (at(1) == "light" || at(1) == "dark")) {
    p = 1;
    if (!parse_background() || at(p) != "with") return std::nullopt;
    ++p;
    if (!parse_facts()) return std::nullopt;
  } else {
    if (!parse_facts()) return std::nullopt;
    if (at(p) != "on" || at(p + 1) != "a") return std::nullopt;
    p += 2;
    if (!parse_background()) return std::nullopt;
  }
  if (p != tok.size()) return std::nullopt;
  return out;
}

std::string example_digest(const DatasetExample& example) {
  Digest d;
  const auto img = example.image.data();
  d.update(std::span(reinterpret_cast<const unsigned char*>(img.data()), img.size_bytes()));
  for (const auto& c : example.captions) {
    d.update(c);
    d.update(std::string_view("\n"));
  }
  d.update(layout_to_json(example.layout));
  for (const auto& m : example.instance_masks) {
    const auto v = m.values();
    d.update(std::span(reinterpret_cast<const unsigned char*>(v.data()), v.size_bytes()));
  }
  return d.hex();
}

std::string dataset_digest(const ShapeWorldConfig& config, std::size_t count) {
  Digest d;
  for (std::size_t index = 0; index < count; ++index) d.update(example_digest(generate_shapeworld(config, index)));
  return d.hex();
}

namespace {
std::string stem(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(index));
  return buf;
}
}  // namespace

void write_example(const std::filesystem::path& dir, std::uint64_t index, const DatasetExample& example) {
  std::filesystem::create_directories(dir);
  write_png(dir / (stem(index) + ".png"), example.image);
  Json j;
  j["index"] = index;
  j["captions"] = example.captions;
  j["layout"] = layout_json(example.layout);
  Json masks = Json::array();
  for (const auto& m : example.instance_masks) masks.push_back(rle_json(rle_encode(m)));
  j["masks"] = std::move(masks);
  write_file_atomic(dir / (stem(index) + ".json"), j.dump(1));
}

DatasetExample read_example(const std::filesystem::path& dir, std::uint64_t index) {
  DatasetExample ex;
  ex.image = read_png(dir / (stem(index) + ".png"));
  const auto bytes = read_file_bytes(dir / (stem(index) + ".json"));
  Json j;
  try {
    j = Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("example JSON: ") + e.what());
  }
  ex.captions = j.at("captions").get<std::vector<std::string>>();
  ex.layout = parse_layout(j.at("layout"));
  for (const auto& m : j.at("masks")) ex.instance_masks.push_back(rle_decode(parse_rle(m)));
  return ex;
}

std::string write_shapeworld_dataset(const std::filesystem::path& dir, const ShapeWorldConfig& config,
                                     std::size_t count) {
  validate(config);
  Digest digest;
  for (std::size_t index = 0; index < count; ++index) {
    const auto example = generate_shapeworld(config, index);
    digest.update(example_digest(example));
    write_example(dir, index, example);
  }
  const auto hex = digest.hex();
  Json meta;
  meta["count"] = count;
  meta["digest"] = hex;
  meta["image_size"] = config.image_size;
  meta["max_objects"] = config.max_objects;
  meta["num_classes"] = config.num_classes;
  meta["palette"] = config.palette;
  meta["seed"] = config.seed;
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "dataset.json", meta.dump(1));
  return hex;
}

std::size_t dataset_size(const std::filesystem::path& dir) {
  const auto bytes = read_file_bytes(dir / "dataset.json");
  try {
    return Json::parse(bytes.begin(), bytes.end()).at("count").get<std::size_t>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("dataset.json: ") + e.what());
  }
}

}  // namespace hiergen
