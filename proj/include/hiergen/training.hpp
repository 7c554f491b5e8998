#pragma once

// Stage-wise training: box (text encoder + box generator), extractor (crop
// classifier behind the perceptual loss and the evaluation score), shape and
// image. GAN stages alternate one discriminator and one generator step per
// batch. A checkpoint is written after every epoch.

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "hiergen/config.hpp"
#include "hiergen/json_io.hpp"
#include "hiergen/rng.hpp"
#include "hiergen/shape_generator.hpp"
#include "hiergen/shapeworld.hpp"

namespace hiergen {

struct TrainingData {
  std::vector<std::string> class_names;
  std::vector<DatasetExample> train;
  std::vector<DatasetExample> val;
};

// Shape-world examples (generated or read from data.path) or a COCO-format
// directory, split into train / val.
TrainingData load_training_data(const Config& config);

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  int d_steps = 0;
  int g_steps = 0;
  std::map<std::string, double> values;  // mean component losses, validation metrics
};

Json epoch_log_json(const EpochLog& log);
EpochLog parse_epoch_log(const Json& value);

struct TrainOptions {
  std::filesystem::path run_dir;
  // Continue from <run_dir>/<stage>.ckpt when it exists.
  bool resume = false;
  bool allow_mismatch = false;
  // Stop after this epoch (0: train to the configured epoch count).
  int stop_after_epoch = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

// Returns the full history, including epochs restored from a checkpoint.
std::vector<EpochLog> train_stage(Stage stage, const Config& config, const TrainingData& data,
                                  const TrainOptions& options);

// Seed of the randomness used in epoch `epoch` of `stage`; epoch 0 seeds
// parameter initialization.
std::uint64_t stage_seed(const Config& config, Stage stage, int epoch);

void set_learning_rate(torch::optim::Optimizer& optimizer, double lr);

// Batch assembly.
torch::Tensor normal_tensor(Rng& rng, at::IntArrayRef shape);
torch::Tensor image_tensor(const RgbImage& image);                                  // [3, H, W]
RgbImage tensor_image(const torch::Tensor& image);                                  // from [3, H, W]
torch::Tensor label_grid_tensor(const LabelGrid& grid);                            // [L, H, W] float
torch::Tensor mask_tensor(const InstanceMask& mask);                               // [H, W]
InstanceMask tensor_mask(const torch::Tensor& mask);
// Ground-truth semantic label map of an example.
SemanticLabelMap example_label_map(const DatasetExample& example, int num_classes, double threshold);
// Pixel-wise max of the box tensors; the label map without a shape generator.
SemanticLabelMap box_label_map(const LayoutSequence& layout, int height, int width);

struct ShapeBatch {
  ShapeInput input;
  torch::Tensor masks;  // [N, T, G, G] ground truth (zeros when absent)
};
ShapeBatch make_shape_batch(const std::vector<const LayoutSequence*>& layouts,
                            const std::vector<const std::vector<InstanceMask>*>& masks, int num_classes, int grid);

// Square window centered on each box with side 1.2 * max(w, h), resized to
// crop_size. images: [N, 3, H, W]; image_index selects the source row.
torch::Tensor crop_boxes(const torch::Tensor& images, const std::vector<std::int64_t>& image_index,
                         const std::vector<BoxSpec>& boxes, int crop_size);

struct ShapeLossTerms {
  torch::Tensor d_loss;
  torch::Tensor g_inst;
  torch::Tensor g_global;
  torch::Tensor rec;
  torch::Tensor g_loss;
  torch::Tensor inst_value;    // instance value function on the batch
  torch::Tensor global_value;  // global value function on the batch
};

// Discriminator objective (minimized) for real vs fake masks.
torch::Tensor shape_discriminator_loss(ShapeDiscriminator& d_inst, ShapeDiscriminator& d_global,
                                       const ShapeBatch& batch, const torch::Tensor& fake, const ShapeConfig& config,
                                       torch::Tensor* inst_value = nullptr, torch::Tensor* global_value = nullptr);
// Generator objective: non-saturating adversarial terms plus reconstruction.
ShapeLossTerms shape_generator_loss(ShapeDiscriminator& d_inst, ShapeDiscriminator& d_global, const ShapeBatch& batch,
                                    const torch::Tensor& fake, const ShapeConfig& config, nn::FeatureExtractor* extractor);

}  // namespace hiergen
