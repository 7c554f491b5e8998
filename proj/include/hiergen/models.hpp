#pragma once

// Construction of every stage's networks from a configuration, and loading
// them back from a run directory (<run_dir>/<stage>.ckpt).

#include <filesystem>

#include "hiergen/box_generator.hpp"
#include "hiergen/checkpoint.hpp"
#include "hiergen/config.hpp"
#include "hiergen/image_generator.hpp"
#include "hiergen/neural.hpp"
#include "hiergen/shape_generator.hpp"
#include "hiergen/text_encoder.hpp"

namespace hiergen {

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, Stage stage);

BoxGenerator make_box_generator(const Config& config);
ShapeGenerator make_shape_generator(const Config& config);
ShapeDiscriminator make_shape_discriminator(const Config& config);
ImageGenerator make_image_generator(const Config& config);
ImageDiscriminator make_image_discriminator(const Config& config);
nn::CropClassifier make_classifier(const Config& config);

struct TextModel {
  Vocabulary vocab;
  TextEncoder encoder{nullptr};

  // [N, D] embeddings in evaluation mode without gradients.
  torch::Tensor embed(const std::vector<std::string>& texts);
};

struct BoxStage {
  TextModel text;
  BoxGenerator generator{nullptr};
  CheckpointManifest manifest;
};

// Loaders freeze the returned modules (eval mode, no gradients).
BoxStage load_box_stage(const std::filesystem::path& run_dir, const Config& config, bool allow_mismatch = false);
ShapeGenerator load_shape_generator(const std::filesystem::path& run_dir, const Config& config,
                                    bool allow_mismatch = false);
struct ImageStage {
  ImageGenerator generator{nullptr};
  ImageDiscriminator discriminator{nullptr};
};
ImageStage load_image_stage(const std::filesystem::path& run_dir, const Config& config, bool allow_mismatch = false);
nn::CropClassifier load_classifier(const std::filesystem::path& run_dir, const Config& config,
                                   bool allow_mismatch = false);
// Frozen extractor of the trained classifier.
nn::FeatureExtractor load_feature_extractor(const std::filesystem::path& run_dir, const Config& config);

void freeze(torch::nn::Module& module);

}  // namespace hiergen
