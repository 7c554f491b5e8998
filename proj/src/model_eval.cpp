#include "hiergen/model_eval.hpp"

#include <algorithm>

#include "hiergen/error.hpp"
#include "hiergen/training.hpp"

namespace hiergen {

double layout_nll(BoxGenerator& model, const torch::Tensor& s, const std::vector<LayoutSequence>& layouts) {
  torch::NoGradGuard no_grad;
  auto r = sequence_nll(model, s, layouts, NllOptions{1.0, 1.0, ClassAveraging::kObjectsAndTerminator});
  double objects = 0.0;
  for (const auto& l : layouts) objects += static_cast<double>(l.boxes.size());
  return (r.class_sum + r.coord_sum).sum().item<double>() / objects;
}

double layout_nll(TextModel& text, BoxGenerator& model, const std::vector<DatasetExample>& examples) {
  double total = 0.0;
  double objects = 0.0;
  constexpr std::size_t kBatch = 128;
  std::vector<std::string> texts;
  std::vector<LayoutSequence> layouts;
  auto flush = [&] {
    if (layouts.empty()) return;
    double n = 0.0;
    for (const auto& l : layouts) n += static_cast<double>(l.boxes.size());
    total += layout_nll(model, text.embed(texts), layouts) * n;
    objects += n;
    texts.clear();
    layouts.clear();
  };
  for (const auto& ex : examples) {
    if (ex.layout.boxes.empty() || ex.captions.empty()) continue;
    texts.push_back(ex.captions.front());
    layouts.push_back(ex.layout);
    if (layouts.size() == kBatch) flush();
  }
  flush();
  if (objects == 0.0) throw Error(ErrorCode::kInvalidArgument, "held-out set has no objects");
  return total / objects;
}

SamplingDiagnostics sampling_diagnostics(TextModel& text, BoxGenerator& model,
                                         const std::vector<DatasetExample>& examples, std::size_t runs,
                                         std::uint64_t seed, int max_steps, double min_extent) {
  if (examples.empty()) throw Error(ErrorCode::kInvalidArgument, "no examples to sample from");
  std::vector<std::string> captions;
  for (const auto& ex : examples) captions.push_back(ex.captions.at(0));
  auto s = text.embed(captions);
  SamplingDiagnostics out;
  std::vector<LayoutSequence> sampled, reference;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    Rng rng(mix_seed(seed, i, 1));
    auto sample = sample_layout(model, s[static_cast<std::int64_t>(i)], rng, max_steps, min_extent);
    sample.layout.class_names = examples[i].layout.class_names;
    sampled.push_back(std::move(sample.layout));
    reference.push_back(examples[i].layout);
  }
  out.tv = count_category_tv(sampled, reference);
  out.samples = sampled.size();
  std::size_t terminated = 0;
  for (std::size_t r = 0; r < runs; ++r) {
    Rng rng(mix_seed(seed, r, 2));
    const auto i = static_cast<std::int64_t>(r % examples.size());
    if (!sample_layout(model, s[i], rng, max_steps, min_extent).truncated) ++terminated;
  }
  out.runs = runs;
  out.termination_rate = runs > 0 ? static_cast<double>(terminated) / static_cast<double>(runs) : 0.0;
  return out;
}

MaskDiagnostics mask_diagnostics(ShapeGenerator& generator, const std::vector<DatasetExample>& examples,
                                 int num_classes, int grid, std::uint64_t seed, double threshold) {
  torch::NoGradGuard no_grad;
  MaskDiagnostics out;
  double iou_sum = 0.0;
  double box_sum = 0.0;
  Rng rng(seed);
  constexpr std::size_t kBatch = 32;
  for (std::size_t start = 0; start < examples.size(); start += kBatch) {
    std::vector<const LayoutSequence*> layouts;
    std::vector<const std::vector<InstanceMask>*> masks;
    for (std::size_t i = start; i < std::min(examples.size(), start + kBatch); ++i) {
      if (examples[i].layout.boxes.empty()) continue;
      layouts.push_back(&examples[i].layout);
      masks.push_back(&examples[i].instance_masks);
    }
    if (layouts.empty()) continue;
    auto batch = make_shape_batch(layouts, masks, num_classes, grid);
    auto z = normal_tensor(rng, {batch.masks.size(0), batch.masks.size(1), generator->noise_dim()});
    auto pred = generator->forward(batch.input, z);
    auto regions = box_regions(batch.input.boxes);
    out.outside_nonzero += ((pred != 0) & (regions == 0)).sum().item<std::int64_t>();
    for (std::size_t i = 0; i < layouts.size(); ++i) {
      for (std::size_t t = 0; t < layouts[i]->boxes.size(); ++t) {
        const auto ii = static_cast<std::int64_t>(i);
        const auto tt = static_cast<std::int64_t>(t);
        const auto& gt = masks[i]->at(t);
        iou_sum += mask_iou(tensor_mask(pred[ii][tt]), gt, threshold);
        box_sum += mask_iou(tensor_mask(regions[ii][tt]), gt, threshold);
        ++out.instances;
      }
    }
  }
  if (out.instances == 0) throw Error(ErrorCode::kInvalidArgument, "held-out set has no objects");
  out.mean_iou = iou_sum / static_cast<double>(out.instances);
  out.box_iou = box_sum / static_cast<double>(out.instances);
  return out;
}

CropDiagnostics crop_diagnostics(nn::CropClassifier& classifier, const torch::Tensor& images,
                                 const std::vector<const LayoutSequence*>& layouts, int crop_size, int splits,
                                 std::uint64_t split_seed) {
  torch::NoGradGuard no_grad;
  std::vector<std::int64_t> index;
  std::vector<BoxSpec> boxes;
  std::vector<std::int64_t> labels;
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    for (const auto& b : layouts[i]->boxes) {
      index.push_back(static_cast<std::int64_t>(i));
      boxes.push_back(b);
      labels.push_back(b.label);
    }
  }
  if (boxes.empty()) throw Error(ErrorCode::kInvalidArgument, "no objects to classify");
  auto crops = crop_boxes(images, index, boxes, crop_size);
  auto probs = torch::softmax(classifier->forward(crops), 1).to(torch::kDouble).contiguous();
  CropDiagnostics out;
  out.crops = boxes.size();
  out.accuracy = probs.argmax(1).eq(torch::tensor(labels, torch::kLong)).to(torch::kDouble).mean().item<double>();
  std::vector<std::vector<double>> rows;
  for (std::int64_t r = 0; r < probs.size(0); ++r) {
    const double* p = probs[r].data_ptr<double>();
    rows.emplace_back(p, p + probs.size(1));
  }
  out.score = classifier_score(rows, splits, split_seed);
  return out;
}

ImageDiagnostics image_diagnostics(ImageStage& image, TextModel& text, nn::CropClassifier& classifier,
                                   const std::vector<DatasetExample>& examples, const Config& config,
                                   std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  std::vector<const DatasetExample*> used;
  for (const auto& ex : examples) {
    if (!ex.layout.boxes.empty()) used.push_back(&ex);
  }
  if (used.size() < 2) throw Error(ErrorCode::kInvalidArgument, "image diagnostics need two scenes with objects");
  const int size = config.data.image_size;
  const int num_classes = config.data.num_classes;
  std::vector<torch::Tensor> maps, reals;
  std::vector<std::string> captions;
  std::vector<const LayoutSequence*> layouts;
  for (const auto* ex : used) {
    auto map = config.pipeline.use_shape_generator ? example_label_map(*ex, num_classes, config.pipeline.mask_threshold)
                                                   : box_label_map(ex->layout, size, size);
    maps.push_back(label_grid_tensor(map));
    reals.push_back(image_tensor(ex->image));
    captions.push_back(ex->captions.at(0));
    layouts.push_back(&ex->layout);
  }
  const auto n = static_cast<std::int64_t>(used.size());
  auto m = torch::stack(maps);
  auto x = torch::stack(reals);
  auto s = text.embed(captions);
  Rng rng(seed);
  auto z = normal_tensor(rng, {n, image.generator->noise_dim()});
  // The control keeps text, noise and crop positions but takes the label map
  // of the next scene.
  auto m_shuffled = torch::roll(m, {1}, {0});
  std::vector<torch::Tensor> gen, ctrl;
  constexpr std::int64_t kBatch = 32;
  for (std::int64_t start = 0; start < n; start += kBatch) {
    const auto end = std::min(n, start + kBatch);
    gen.push_back(image.generator->forward(m.slice(0, start, end), s.slice(0, start, end), z.slice(0, start, end)));
    ctrl.push_back(
        image.generator->forward(m_shuffled.slice(0, start, end), s.slice(0, start, end), z.slice(0, start, end)));
  }
  ImageDiagnostics out;
  out.images = static_cast<std::size_t>(n);
  const int splits = 10;
  out.generated = crop_diagnostics(classifier, torch::cat(gen), layouts, config.extractor.crop_size, splits, seed);
  out.shuffled_control =
      crop_diagnostics(classifier, torch::cat(ctrl), layouts, config.extractor.crop_size, splits, seed);
  auto wrong = mismatched_embeddings(s, 1);
  out.d_matched = torch::sigmoid(image.discriminator->forward(m, s, x)).mean().item<double>();
  out.d_mismatched = torch::sigmoid(image.discriminator->forward(m, wrong, x)).mean().item<double>();
  return out;
}

MetricReport evaluate_stage(Stage stage, const std::filesystem::path& run_dir, const Config& config,
                            const std::vector<DatasetExample>& examples, std::uint64_t seed) {
  if (examples.empty()) throw Error(ErrorCode::kInvalidArgument, "evaluation set is empty");
  MetricReport report;
  report.stage = to_string(stage);
  switch (stage) {
    case Stage::kBox: {
      auto box = load_box_stage(run_dir, config);
      const double min_extent = 1.0 / config.data.image_size;
      report.set("nll_per_object", layout_nll(box.text, box.generator, examples), examples.size());
      auto diag = sampling_diagnostics(box.text, box.generator, examples, 1000, seed, config.box.max_steps, min_extent);
      report.set("tv_count", diag.tv.count, diag.samples);
      report.set("tv_category", diag.tv.category, diag.samples);
      report.set("termination_rate", diag.termination_rate, diag.runs);
      break;
    }
    case Stage::kShape: {
      auto generator = load_shape_generator(run_dir, config);
      auto diag = mask_diagnostics(generator, examples, config.data.num_classes, config.data.image_size, seed,
                                   config.pipeline.mask_threshold);
      report.set("mask_iou", diag.mean_iou, diag.instances);
      report.set("box_region_iou", diag.box_iou, diag.instances);
      report.set("outside_box_nonzero", static_cast<double>(diag.outside_nonzero), diag.instances);
      break;
    }
    case Stage::kImage: {
      auto image = load_image_stage(run_dir, config);
      auto box = load_box_stage(run_dir, config);
      auto classifier = load_classifier(run_dir, config);
      auto diag = image_diagnostics(image, box.text, classifier, examples, config, seed);
      report.set("crop_accuracy", diag.generated.accuracy, diag.generated.crops);
      report.set("crop_accuracy_shuffled", diag.shuffled_control.accuracy, diag.shuffled_control.crops);
      report.set("classifier_score", diag.generated.score.mean, diag.generated.crops, diag.generated.score.std);
      report.set("classifier_score_shuffled", diag.shuffled_control.score.mean, diag.shuffled_control.crops,
                 diag.shuffled_control.score.std);
      report.set("d_matched", diag.d_matched, diag.images);
      report.set("d_mismatched", diag.d_mismatched, diag.images);
      break;
    }
    case Stage::kExtractor: {
      auto classifier = load_classifier(run_dir, config);
      std::vector<torch::Tensor> images;
      std::vector<const LayoutSequence*> layouts;
      for (const auto& ex : examples) {
        images.push_back(image_tensor(ex.image));
        layouts.push_back(&ex.layout);
      }
      auto diag = crop_diagnostics(classifier, torch::stack(images), layouts, config.extractor.crop_size, 10, seed);
      report.set("crop_accuracy", diag.accuracy, diag.crops);
      report.set("classifier_score", diag.score.mean, diag.crops, diag.score.std);
      break;
    }
  }
  return report;
}

}  // namespace hiergen
