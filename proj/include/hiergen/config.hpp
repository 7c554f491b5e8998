#pragma once

// Versioned run configuration. Every hyperparameter lives here with its
// default; a config file only needs to list the values it overrides.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hiergen/json_io.hpp"
#include "hiergen/shapeworld.hpp"

namespace hiergen {

enum class Stage { kBox, kShape, kImage, kExtractor };

std::string to_string(Stage stage);
Stage parse_stage(const std::string& name);

enum class DecayKind { kNone, kExponential, kLinearToZero };

struct DecayRule {
  DecayKind kind = DecayKind::kNone;
  double rate = 0.5;     // per-epoch factor for kExponential
  int after_epoch = 0;   // last epoch trained at the base rate
  int end_epoch = 0;     // kLinearToZero reaches 0 here
};

struct OptimizerSpec {
  Stage stage = Stage::kBox;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  DecayRule decay;
};

OptimizerSpec default_optimizer(Stage stage);
// Learning rate for the 1-based training epoch `epoch`.
double lr_at(const OptimizerSpec& spec, int epoch);

enum class ClassAveraging { kObjectsAndTerminator, kObjects };
enum class ReconstructionLoss { kPerceptual, kL1 };

struct DataConfig {
  int image_size = 64;
  int max_objects = 4;
  int num_classes = 6;
  std::vector<std::string> palette = {"red", "green", "blue", "yellow"};
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  int num_train = 2000;
  int num_val = 500;
  // "shapeworld" or "coco".
  std::string format = "shapeworld";
  // shapeworld: optional directory written by `make-shapeworld`; empty means
  // examples are generated on the fly. coco: directory holding
  // instances.json, captions.json and an optional images/ folder.
  std::string path;
};

struct TextConfig {
  int min_freq = 1;
  int token_dim = 32;
  int hidden_dim = 64;
  int embedding_dim = 128;
};

struct BoxConfig {
  int hidden_dim = 128;
  int mixture_components = 5;
  double lambda_class = 4.0;
  double lambda_box = 1.0;
  int max_steps = 20;
  ClassAveraging class_averaging = ClassAveraging::kObjectsAndTerminator;
  double rho_limit = 0.99999;
  int batch_size = 32;
  int epochs = 20;
  OptimizerSpec optimizer = default_optimizer(Stage::kBox);
};

struct ShapeConfig {
  int mask_size = 32;
  int base_channels = 32;
  int num_down = 2;
  int lstm_channels = 64;
  int num_residual = 2;
  int noise_dim = 16;
  bool bidirectional = true;
  bool output_masking = true;
  ReconstructionLoss reconstruction = ReconstructionLoss::kPerceptual;
  double lambda_inst = 1.0;
  double lambda_global = 1.0;
  double lambda_rec = 10.0;
  int disc_channels = 32;
  int disc_down = 3;
  int batch_size = 16;
  int epochs = 100;
  OptimizerSpec optimizer = default_optimizer(Stage::kShape);
};

struct ImageConfig {
  int base_channels = 32;
  int num_down = 3;
  int feature_dim = 256;
  int background_dim = 32;
  int noise_dim = 64;
  int num_residual = 2;
  bool attention = true;
  ReconstructionLoss reconstruction = ReconstructionLoss::kPerceptual;
  double lambda_adv = 1.0;
  double lambda_rec = 10.0;
  int disc_channels = 32;
  int disc_down = 4;
  int disc_text_dim = 32;
  bool train_on_predicted_layouts = false;
  int batch_size = 16;
  int epochs = 60;
  OptimizerSpec optimizer = default_optimizer(Stage::kImage);
};

struct ExtractorConfig {
  std::vector<int> channels = {16, 32, 64, 128};
  int crop_size = 32;
  bool include_identity = false;
  int batch_size = 64;
  int epochs = 4;
  OptimizerSpec optimizer = default_optimizer(Stage::kExtractor);
};

struct PipelineConfig {
  bool use_shape_generator = true;
  double mask_threshold = 0.5;
};

struct Config {
  static constexpr int kSchemaVersion = 1;
  int schema_version = kSchemaVersion;
  // Seed for parameter initialization and training-time randomness.
  std::uint64_t seed = 0;
  DataConfig data;
  TextConfig text;
  BoxConfig box;
  ShapeConfig shape;
  ImageConfig image;
  ExtractorConfig extractor;
  PipelineConfig pipeline;
};

// Keys are emitted in sorted order, which keeps digests canonical.
nlohmann::json config_json(const Config& config);
// Overlays `value` onto the defaults; unknown keys are rejected.
Config parse_config(const nlohmann::json& value);
Config load_config(const std::filesystem::path& path);

ShapeWorldConfig shapeworld_config(const DataConfig& data);

// Digest of every setting that determines a stage's parameter shapes.
std::string architecture_digest(const Config& config, Stage stage);

}  // namespace hiergen
