#pragma once

// Model-driven evaluations: layout likelihood and sampling diagnostics for the
// box stage, mask IoU for the shape stage, crop classification and
// discriminator text sensitivity for the image stage.

#include <filesystem>
#include <vector>

#include "hiergen/box_generator.hpp"
#include "hiergen/config.hpp"
#include "hiergen/evaluation.hpp"
#include "hiergen/models.hpp"
#include "hiergen/shapeworld.hpp"

namespace hiergen {

// Teacher-forced NLL (class terms over T + 1 steps plus coordinate terms over
// T steps, unit weights) summed over scenes and divided by the object count.
double layout_nll(BoxGenerator& model, const torch::Tensor& s, const std::vector<LayoutSequence>& layouts);
// Uses each example's first caption.
double layout_nll(TextModel& text, BoxGenerator& model, const std::vector<DatasetExample>& examples);

struct SamplingDiagnostics {
  TotalVariation tv;
  double termination_rate = 0.0;  // fraction of runs that stopped before T_max
  std::size_t runs = 0;
  std::size_t samples = 0;  // layouts used for the TV comparison
};

// One sample per example (first caption) for the TV distances; `runs`
// samples cycling through the captions for the termination rate.
SamplingDiagnostics sampling_diagnostics(TextModel& text, BoxGenerator& model,
                                         const std::vector<DatasetExample>& examples, std::size_t runs,
                                         std::uint64_t seed, int max_steps, double min_extent);

struct MaskDiagnostics {
  double mean_iou = 0.0;
  double box_iou = 0.0;  // IoU of the full box region, for reference
  std::size_t instances = 0;
  std::size_t outside_nonzero = 0;  // mask values != 0 outside their box
};

MaskDiagnostics mask_diagnostics(ShapeGenerator& generator, const std::vector<DatasetExample>& examples,
                                 int num_classes, int grid, std::uint64_t seed, double threshold);

struct CropDiagnostics {
  double accuracy = 0.0;
  ScoreSummary score;
  std::size_t crops = 0;
};

// Classifies the crops at `layouts[i]`'s boxes of images[i].
CropDiagnostics crop_diagnostics(nn::CropClassifier& classifier, const torch::Tensor& images,
                                 const std::vector<const LayoutSequence*>& layouts, int crop_size, int splits,
                                 std::uint64_t split_seed);

struct ImageDiagnostics {
  CropDiagnostics generated;
  CropDiagnostics shuffled_control;  // images generated from another scene's label map
  double d_matched = 0.0;            // mean D(M, s, X) on real held-out triples
  double d_mismatched = 0.0;         // mean D(M, s~, X)
  std::size_t images = 0;
};

ImageDiagnostics image_diagnostics(ImageStage& image, TextModel& text, nn::CropClassifier& classifier,
                                   const std::vector<DatasetExample>& examples, const Config& config,
                                   std::uint64_t seed);

// Report for one trained stage in run_dir, evaluated on data.val.
MetricReport evaluate_stage(Stage stage, const std::filesystem::path& run_dir, const Config& config,
                            const std::vector<DatasetExample>& examples, std::uint64_t seed);

}  // namespace hiergen
