#include "hiergen/pipeline.hpp"

#include "hiergen/digest.hpp"
#include "hiergen/error.hpp"
#include "hiergen/training.hpp"

namespace hiergen {

namespace {
constexpr std::uint64_t kLayoutStream = 1;
constexpr std::uint64_t kMaskStream = 2;
constexpr std::uint64_t kImageStream = 3;
}  // namespace

std::shared_ptr<const Pipeline> Pipeline::load(const std::filesystem::path& run_dir,
                                               const std::optional<Config>& config) {
  std::shared_ptr<Pipeline> p(new Pipeline());
  if (config) {
    p->config_ = *config;
  } else {
    const auto path = checkpoint_path(run_dir, Stage::kBox);
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::kNotLoaded, "no box checkpoint at " + path.string());
    CheckpointReader reader(path);
    p->config_ = parse_config(nlohmann::json::parse(reader.manifest().config.dump()));
  }
  const auto& cfg = p->config_;
  auto box = load_box_stage(run_dir, cfg);
  p->text_ = box.text;
  p->box_ = box.generator;
  Digest version;
  version.update(checkpoint_digest(checkpoint_path(run_dir, Stage::kBox)));
  if (cfg.pipeline.use_shape_generator) {
    p->shape_ = load_shape_generator(run_dir, cfg);
    version.update(checkpoint_digest(checkpoint_path(run_dir, Stage::kShape)));
  }
  p->image_ = load_image_stage(run_dir, cfg).generator;
  version.update(checkpoint_digest(checkpoint_path(run_dir, Stage::kImage)));
  p->model_version_ = version.hex();
  p->class_names_ = box.manifest.extra.contains("class_names")
                       ? box.manifest.extra.at("class_names").get<std::vector<std::string>>()
                       : hiergen::class_names(shapeworld_config(cfg.data));
  return p;
}

std::shared_ptr<const Pipeline> Pipeline::random(const Config& config, const std::vector<std::string>& corpus,
                                                 std::uint64_t seed) {
  std::shared_ptr<Pipeline> p(new Pipeline());
  p->config_ = config;
  torch::manual_seed(seed);
  p->text_.vocab = Vocabulary::build(corpus, config.text.min_freq);
  p->text_.encoder = TextEncoder(p->text_.vocab.size(), config.text);
  p->box_ = make_box_generator(config);
  p->image_ = make_image_generator(config);
  freeze(*p->text_.encoder);
  freeze(*p->box_);
  freeze(*p->image_);
  if (config.pipeline.use_shape_generator) {
    p->shape_ = make_shape_generator(config);
    freeze(*p->shape_);
  }
  p->model_version_ = sha256_hex("random:" + std::to_string(seed) + ":" + config_json(config).dump());
  p->class_names_ = hiergen::class_names(shapeworld_config(config.data));
  return p;
}

torch::Tensor Pipeline::embed(const std::string& text) const {
  if (tokenize(text).empty()) {
    // Without text the image stage is conditioned on a zero embedding.
    return torch::zeros({1, config_.text.embedding_dim});
  }
  return text_.embed({text});
}

std::pair<LayoutSequence, bool> Pipeline::sample_layout(const std::string& text, std::uint64_t seed) const {
  if (tokenize(text).empty()) throw Error(ErrorCode::kInvalidArgument, "text must contain at least one word", "text");
  Rng rng(mix_seed(seed, kLayoutStream));
  auto s = text_.embed({text});
  auto sample = hiergen::sample_layout(box_, s[0], rng, config_.box.max_steps, 1.0 / grid());
  sample.layout.class_names = class_names_;
  return {sample.layout, sample.truncated};
}

std::vector<InstanceMask> Pipeline::generate_masks(const LayoutSequence& layout, std::uint64_t seed) const {
  validate_layout(layout);
  std::vector<InstanceMask> out;
  if (layout.boxes.empty()) return out;
  if (!config_.pipeline.use_shape_generator) {
    for (const auto& b : layout.boxes) out.push_back(box_region(b, grid(), grid()));
    return out;
  }
  torch::NoGradGuard no_grad;
  Rng rng(mix_seed(seed, kMaskStream));
  auto batch = make_shape_batch({&layout}, {}, static_cast<int>(class_names_.size()), grid());
  auto z = normal_tensor(rng, {1, batch.masks.size(1), shape_->noise_dim()});
  auto masks = shape_->forward(batch.input, z)[0];
  for (std::size_t t = 0; t < layout.boxes.size(); ++t) out.push_back(tensor_mask(masks[static_cast<std::int64_t>(t)]));
  return out;
}

RgbImage Pipeline::render(const LayoutSequence& layout, const std::vector<InstanceMask>& masks,
                          const std::string& text, std::uint64_t seed) const {
  validate_layout(layout);
  const int n = grid();
  const int num_classes = static_cast<int>(class_names_.size());
  if (masks.size() != layout.boxes.size()) {
    throw Error(ErrorCode::kShapeMismatch, "one mask per box is required", "masks");
  }
  for (std::size_t t = 0; t < masks.size(); ++t) {
    if (masks[t].height() != n || masks[t].width() != n) {
      throw Error(ErrorCode::kShapeMismatch, "mask grid must be " + std::to_string(n) + "x" + std::to_string(n),
                  "masks[" + std::to_string(t) + "]");
    }
  }
  SemanticLabelMap map;
  if (config_.pipeline.use_shape_generator) {
    std::vector<int> labels;
    for (const auto& b : layout.boxes) labels.push_back(b.label);
    map = compose_label_map(masks, labels, num_classes, n, n, config_.pipeline.mask_threshold);
  } else {
    map = box_label_map(layout, n, n);
  }
  torch::NoGradGuard no_grad;
  Rng rng(mix_seed(seed, kImageStream));
  auto z = normal_tensor(rng, {1, image_->noise_dim()});
  auto image = image_->forward(label_grid_tensor(map).unsqueeze(0), embed(text), z);
  return tensor_image(image[0]);
}

PipelineResult Pipeline::generate(const PipelineRequest& request) const {
  PipelineResult out;
  if (request.masks && !request.layout) {
    throw Error(ErrorCode::kInvalidArgument, "masks can only be supplied together with a layout", "masks");
  }
  if (request.layout) {
    out.layout = *request.layout;
    if (out.layout.class_names.empty()) out.layout.class_names = class_names_;
    if (out.layout.class_names != class_names_) {
      throw Error(ErrorCode::kInvalidArgument, "layout classes differ from the model's classes", "layout.classes");
    }
    validate_layout(out.layout, "layout");
  } else {
    std::tie(out.layout, out.truncated) = sample_layout(request.text, request.seed);
  }
  out.masks = request.masks ? *request.masks : generate_masks(out.layout, request.seed);
  out.image = render(out.layout, out.masks, request.text, request.seed);
  return out;
}

}  // namespace hiergen
