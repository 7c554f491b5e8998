#include "hiergen/models.hpp"

#include "hiergen/error.hpp"

namespace hiergen {

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, Stage stage) {
  return run_dir / (to_string(stage) + ".ckpt");
}

BoxGenerator make_box_generator(const Config& config) {
  return BoxGenerator(config.text.embedding_dim, config.data.num_classes, config.box);
}

ShapeGenerator make_shape_generator(const Config& config) {
  return ShapeGenerator(config.data.num_classes, config.data.image_size, config.shape);
}

ShapeDiscriminator make_shape_discriminator(const Config& config) {
  return ShapeDiscriminator(config.data.num_classes, config.shape);
}

ImageGenerator make_image_generator(const Config& config) {
  return ImageGenerator(config.data.num_classes, config.text.embedding_dim, config.data.image_size, config.image);
}

ImageDiscriminator make_image_discriminator(const Config& config) {
  return ImageDiscriminator(config.data.num_classes, config.text.embedding_dim, config.image);
}

nn::CropClassifier make_classifier(const Config& config) {
  return nn::CropClassifier(config.extractor, config.data.num_classes);
}

void freeze(torch::nn::Module& module) {
  for (auto& p : module.parameters()) p.set_requires_grad(false);
  module.eval();
}

torch::Tensor TextModel::embed(const std::vector<std::string>& texts) {
  torch::NoGradGuard no_grad;
  return encode_texts(encoder, vocab, texts);
}

namespace {
CheckpointReader open_stage(const std::filesystem::path& run_dir, const Config& config, Stage stage,
                            bool allow_mismatch) {
  const auto path = checkpoint_path(run_dir, stage);
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kNotLoaded, "no " + to_string(stage) + " checkpoint at " + path.string());
  }
  CheckpointReader reader(path);
  reader.check_compatible(stage, architecture_digest(config, stage), allow_mismatch);
  return reader;
}
}  // namespace

BoxStage load_box_stage(const std::filesystem::path& run_dir, const Config& config, bool allow_mismatch) {
  auto reader = open_stage(run_dir, config, Stage::kBox, allow_mismatch);
  BoxStage stage;
  stage.manifest = reader.manifest();
  if (!stage.manifest.extra.contains("vocabulary")) {
    throw Error(ErrorCode::kParse, "box checkpoint lacks its vocabulary");
  }
  stage.text.vocab = Vocabulary::from_json(stage.manifest.extra.at("vocabulary"));
  stage.text.encoder = TextEncoder(stage.text.vocab.size(), config.text);
  stage.generator = make_box_generator(config);
  reader.load_module("text_encoder", *stage.text.encoder);
  reader.load_module("box_generator", *stage.generator);
  freeze(*stage.text.encoder);
  freeze(*stage.generator);
  return stage;
}

ShapeGenerator load_shape_generator(const std::filesystem::path& run_dir, const Config& config, bool allow_mismatch) {
  auto reader = open_stage(run_dir, config, Stage::kShape, allow_mismatch);
  auto generator = make_shape_generator(config);
  reader.load_module("shape_generator", *generator);
  freeze(*generator);
  return generator;
}

ImageStage load_image_stage(const std::filesystem::path& run_dir, const Config& config, bool allow_mismatch) {
  auto reader = open_stage(run_dir, config, Stage::kImage, allow_mismatch);
  ImageStage stage{make_image_generator(config), make_image_discriminator(config)};
  reader.load_module("image_generator", *stage.generator);
  reader.load_module("image_discriminator", *stage.discriminator);
  freeze(*stage.generator);
  freeze(*stage.discriminator);
  return stage;
}

nn::CropClassifier load_classifier(const std::filesystem::path& run_dir, const Config& config, bool allow_mismatch) {
  auto reader = open_stage(run_dir, config, Stage::kExtractor, allow_mismatch);
  auto classifier = make_classifier(config);
  reader.load_module("classifier", *classifier);
  freeze(*classifier);
  return classifier;
}

nn::FeatureExtractor load_feature_extractor(const std::filesystem::path& run_dir, const Config& config) {
  auto classifier = load_classifier(run_dir, config);
  auto extractor = classifier->extractor();
  extractor->freeze();
  return extractor;
}

}  // namespace hiergen
