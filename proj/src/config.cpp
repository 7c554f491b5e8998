#include "hiergen/config.hpp"

#include <cmath>

#include "hiergen/digest.hpp"
#include "hiergen/error.hpp"
#include "hiergen/image_io.hpp"

namespace hiergen {

NLOHMANN_JSON_SERIALIZE_ENUM(Stage, {{Stage::kBox, "box"},
                                     {Stage::kShape, "shape"},
                                     {Stage::kImage, "image"},
                                     {Stage::kExtractor, "extractor"}})
NLOHMANN_JSON_SERIALIZE_ENUM(DecayKind, {{DecayKind::kNone, "none"},
                                         {DecayKind::kExponential, "exponential"},
                                         {DecayKind::kLinearToZero, "linear_to_zero"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ClassAveraging, {{ClassAveraging::kObjectsAndTerminator, "objects_and_terminator"},
                                              {ClassAveraging::kObjects, "objects"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ReconstructionLoss, {{ReconstructionLoss::kPerceptual, "perceptual"},
                                                  {ReconstructionLoss::kL1, "l1"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DecayRule, kind, rate, after_epoch, end_epoch)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OptimizerSpec, stage, lr, beta1, beta2, decay)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, image_size, max_objects, num_classes, palette, seed,
                                                val_fraction, num_train, num_val, format, path)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TextConfig, min_freq, token_dim, hidden_dim, embedding_dim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BoxConfig, hidden_dim, mixture_components, lambda_class, lambda_box,
                                                max_steps, class_averaging, rho_limit, batch_size, epochs, optimizer)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ShapeConfig, mask_size, base_channels, num_down, lstm_channels,
                                                num_residual, noise_dim, bidirectional, output_masking,
                                                reconstruction, lambda_inst, lambda_global, lambda_rec,
                                                disc_channels, disc_down, batch_size, epochs, optimizer)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ImageConfig, base_channels, num_down, feature_dim, background_dim,
                                                noise_dim, num_residual, attention, reconstruction, lambda_adv,
                                                lambda_rec, disc_channels, disc_down, disc_text_dim,
                                                train_on_predicted_layouts, batch_size, epochs, optimizer)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExtractorConfig, channels, crop_size, include_identity, batch_size,
                                                epochs, optimizer)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PipelineConfig, use_shape_generator, mask_threshold)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Config, schema_version, seed, data, text, box, shape, image, extractor,
                                                pipeline)

std::string to_string(Stage stage) { return nlohmann::json(stage).get<std::string>(); }

Stage parse_stage(const std::string& name) {
  for (Stage s : {Stage::kBox, Stage::kShape, Stage::kImage, Stage::kExtractor}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown stage '" + name + "'", "stage");
}

OptimizerSpec default_optimizer(Stage stage) {
  switch (stage) {
    case Stage::kBox:
      return {stage, 1e-3, 0.9, 0.999, {DecayKind::kExponential, 0.5, 10, 0}};
    case Stage::kShape:
      return {stage, 2e-4, 0.5, 0.999, {DecayKind::kLinearToZero, 0.5, 50, 100}};
    case Stage::kImage:
      return {stage, 2e-4, 0.5, 0.999, {DecayKind::kLinearToZero, 0.5, 30, 60}};
    case Stage::kExtractor:
      return {stage, 1e-3, 0.9, 0.999, {DecayKind::kNone, 0.5, 0, 0}};
  }
  return {};
}

double lr_at(const OptimizerSpec& spec, int epoch) {
  if (epoch < 0) throw Error(ErrorCode::kInvalidArgument, "epoch must be non-negative");
  const auto& d = spec.decay;
  switch (d.kind) {
    case DecayKind::kNone:
      return spec.lr;
    case DecayKind::kExponential:
      if (epoch <= d.after_epoch) return spec.lr;
      return spec.lr * std::pow(d.rate, epoch - d.after_epoch);
    case DecayKind::kLinearToZero:
      if (epoch <= d.after_epoch) return spec.lr;
      if (epoch >= d.end_epoch) return 0.0;
      return spec.lr * static_cast<double>(d.end_epoch - epoch) / static_cast<double>(d.end_epoch - d.after_epoch);
  }
  return spec.lr;
}

nlohmann::json config_json(const Config& config) { return config; }

namespace {

bool same_kind(const nlohmann::json& given, const nlohmann::json& known) {
  if (known.is_null()) return true;
  if (known.is_number_integer()) return given.is_number_integer();
  if (known.is_number()) return given.is_number();
  return given.type() == known.type();
}

// Unknown keys and values whose JSON type differs from the default's.
void check_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& path) {
  if (!given.is_object() || !known.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const auto it = known.find(key);
    const std::string child = path.empty() ? key : path + "." + key;
    if (it == known.end()) throw Error(ErrorCode::kParse, "unknown config key '" + child + "'", child);
    if (!same_kind(value, *it)) {
      throw Error(ErrorCode::kParse, "config key '" + child + "' must be " + std::string(it->type_name()), child);
    }
    check_keys(value, *it, child);
  }
}

}  // namespace

Config parse_config(const nlohmann::json& value) {
  if (!value.is_object()) throw Error(ErrorCode::kParse, "config must be a JSON object");
  nlohmann::json merged = config_json(Config{});
  check_keys(value, merged, "");
  merged.merge_patch(value);
  Config config;
  try {
    config = merged.get<Config>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("config: ") + e.what());
  }
  if (config.schema_version != Config::kSchemaVersion) {
    throw Error(ErrorCode::kConfigMismatch,
                "config schema_version " + std::to_string(config.schema_version) + " is not supported",
                "schema_version");
  }
  validate(shapeworld_config(config.data));
  if (config.data.format != "shapeworld" && config.data.format != "coco") {
    throw Error(ErrorCode::kInvalidArgument, "data.format must be 'shapeworld' or 'coco'", "data.format");
  }
  for (const auto& [name, spec] : {std::pair{"box", &config.box.optimizer}, std::pair{"shape", &config.shape.optimizer},
                                   std::pair{"image", &config.image.optimizer},
                                   std::pair{"extractor", &config.extractor.optimizer}}) {
    const std::string path = std::string(name) + ".optimizer";
    if (!(spec->lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be positive", path + ".lr");
    if (!(spec->beta1 >= 0.0 && spec->beta1 < 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "beta1 must lie in [0, 1)", path + ".beta1");
    }
    if (!(spec->beta2 >= 0.0 && spec->beta2 < 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "beta2 must lie in [0, 1)", path + ".beta2");
    }
  }
  return config;
}

Config load_config(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return parse_config(value);
}

ShapeWorldConfig shapeworld_config(const DataConfig& data) {
  ShapeWorldConfig sw;
  sw.image_size = data.image_size;
  sw.max_objects = data.max_objects;
  sw.num_classes = data.num_classes;
  sw.palette = data.palette;
  sw.seed = data.seed;
  sw.val_fraction = data.val_fraction;
  return sw;
}

std::string architecture_digest(const Config& config, Stage stage) {
  nlohmann::json arch;
  arch["stage"] = stage;
  arch["num_classes"] = config.data.num_classes;
  arch["image_size"] = config.data.image_size;
  switch (stage) {
    case Stage::kBox:
      arch["text"] = config.text;
      arch["box"] = {{"hidden_dim", config.box.hidden_dim}, {"mixture_components", config.box.mixture_components}};
      break;
    case Stage::kShape: {
      const auto& s = config.shape;
      arch["shape"] = {{"mask_size", s.mask_size},         {"base_channels", s.base_channels},
                       {"num_down", s.num_down},           {"lstm_channels", s.lstm_channels},
                       {"num_residual", s.num_residual},   {"noise_dim", s.noise_dim},
                       {"bidirectional", s.bidirectional}, {"disc_channels", s.disc_channels},
                       {"disc_down", s.disc_down}};
      break;
    }
    case Stage::kImage: {
      const auto& s = config.image;
      arch["text_dim"] = config.text.embedding_dim;
      arch["image"] = {{"base_channels", s.base_channels}, {"num_down", s.num_down},
                       {"feature_dim", s.feature_dim},     {"background_dim", s.background_dim},
                       {"noise_dim", s.noise_dim},         {"num_residual", s.num_residual},
                       {"attention", s.attention},         {"disc_channels", s.disc_channels},
                       {"disc_down", s.disc_down},         {"disc_text_dim", s.disc_text_dim}};
      break;
    }
    case Stage::kExtractor:
      arch["extractor"] = {{"channels", config.extractor.channels},
                           {"include_identity", config.extractor.include_identity}};
      break;
  }
  return sha256_hex(arch.dump());
}

}  // namespace hiergen
