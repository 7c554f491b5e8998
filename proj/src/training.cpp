#include "hiergen/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hiergen/box_generator.hpp"
#include "hiergen/checkpoint.hpp"
#include "hiergen/coco.hpp"
#include "hiergen/error.hpp"
#include "hiergen/log.hpp"
#include "hiergen/model_eval.hpp"
#include "hiergen/models.hpp"

namespace hiergen {

namespace F = torch::nn::functional;

TrainingData load_training_data(const Config& config) {
  TrainingData data;
  const auto sw = shapeworld_config(config.data);
  const auto num_train = static_cast<std::size_t>(std::max(0, config.data.num_train));
  const auto num_val = static_cast<std::size_t>(std::max(0, config.data.num_val));
  if (config.data.format == "coco") {
    const std::filesystem::path dir = config.data.path;
    CocoLoadConfig cc;
    cc.image_size = config.data.image_size;
    if (std::filesystem::is_directory(dir / "images")) cc.image_root = dir / "images";
    auto coco = load_coco_format(dir / "instances.json", dir / "captions.json", cc);
    if (static_cast<int>(coco.class_names.size()) != config.data.num_classes) {
      throw Error(ErrorCode::kConfigMismatch, "data.num_classes does not match the COCO categories",
                  "data.num_classes");
    }
    data.class_names = coco.class_names;
    for (std::size_t i = 0; i < coco.examples.size(); ++i) {
      auto& target = split_of(sw, i) == Split::kVal ? data.val : data.train;
      const auto limit = &target == &data.val ? num_val : num_train;
      if (target.size() < limit) target.push_back(std::move(coco.examples[i]));
    }
    return data;
  }
  data.class_names = class_names(sw);
  if (config.data.path.empty()) {
    for (auto index : split_indices(sw, Split::kTrain, num_train)) data.train.push_back(generate_shapeworld(sw, index));
    for (auto index : split_indices(sw, Split::kVal, num_val)) data.val.push_back(generate_shapeworld(sw, index));
    return data;
  }
  const std::filesystem::path dir = config.data.path;
  const auto count = dataset_size(dir);
  for (std::size_t index = 0; index < count && (data.train.size() < num_train || data.val.size() < num_val); ++index) {
    auto& target = split_of(sw, index) == Split::kVal ? data.val : data.train;
    const auto limit = &target == &data.val ? num_val : num_train;
    if (target.size() < limit) target.push_back(read_example(dir, index));
  }
  return data;
}

Json epoch_log_json(const EpochLog& log) {
  Json j;
  j["epoch"] = log.epoch;
  j["lr"] = log.lr;
  j["d_steps"] = log.d_steps;
  j["g_steps"] = log.g_steps;
  Json values = Json::object();
  for (const auto& [k, v] : log.values) values[k] = v;
  j["values"] = values;
  return j;
}

EpochLog parse_epoch_log(const Json& j) {
  EpochLog log;
  log.epoch = j.at("epoch").get<int>();
  log.lr = j.at("lr").get<double>();
  log.d_steps = j.at("d_steps").get<int>();
  log.g_steps = j.at("g_steps").get<int>();
  for (const auto& [k, v] : j.at("values").items()) log.values[k] = v.get<double>();
  return log;
}

std::uint64_t stage_seed(const Config& config, Stage stage, int epoch) {
  return mix_seed(config.seed, static_cast<std::uint64_t>(stage) + 1, static_cast<std::uint64_t>(epoch));
}

void set_learning_rate(torch::optim::Optimizer& optimizer, double lr) {
  for (auto& group : optimizer.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

torch::Tensor normal_tensor(Rng& rng, at::IntArrayRef shape) {
  auto out = torch::empty(shape, torch::kFloat);
  auto* p = out.data_ptr<float>();
  for (std::int64_t i = 0; i < out.numel(); ++i) p[i] = static_cast<float>(rng.normal());
  return out;
}

torch::Tensor image_tensor(const RgbImage& image) {
  const auto values = image.data();
  return torch::from_blob(const_cast<float*>(values.data()), {3, image.height(), image.width()}, torch::kFloat).clone();
}

RgbImage tensor_image(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw Error(ErrorCode::kShapeMismatch, "image tensor must be [3, H, W]");
  auto t = image.detach().to(torch::kFloat).contiguous();
  RgbImage out(static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
  std::copy(t.data_ptr<float>(), t.data_ptr<float>() + t.numel(), out.data().begin());
  return out;
}

torch::Tensor label_grid_tensor(const LabelGrid& grid) {
  const auto values = grid.data();
  return torch::from_blob(const_cast<std::uint8_t*>(values.data()), {grid.channels(), grid.height(), grid.width()},
                          torch::kUInt8)
      .to(torch::kFloat);
}

torch::Tensor mask_tensor(const InstanceMask& mask) {
  const auto values = mask.values();
  return torch::from_blob(const_cast<float*>(values.data()), {mask.height(), mask.width()}, torch::kFloat).clone();
}

InstanceMask tensor_mask(const torch::Tensor& mask) {
  if (mask.dim() != 2) throw Error(ErrorCode::kShapeMismatch, "mask tensor must be [H, W]");
  auto t = mask.detach().to(torch::kFloat).contiguous();
  return InstanceMask(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)),
                      std::vector<float>(t.data_ptr<float>(), t.data_ptr<float>() + t.numel()));
}

SemanticLabelMap example_label_map(const DatasetExample& example, int num_classes, double threshold) {
  std::vector<int> labels;
  for (const auto& b : example.layout.boxes) labels.push_back(b.label);
  return compose_label_map(example.instance_masks, labels, num_classes, example.image.height(),
                           example.image.width(), threshold);
}

SemanticLabelMap box_label_map(const LayoutSequence& layout, int height, int width) {
  SemanticLabelMap map(height, width, layout.num_classes());
  if (layout.boxes.empty()) return map;
  std::vector<BoxTensor> tensors;
  for (const auto& b : layout.boxes) tensors.push_back(tensorize_box(b, height, width, layout.num_classes()));
  return aggregate_box_tensors(tensors);
}

ShapeBatch make_shape_batch(const std::vector<const LayoutSequence*>& layouts,
                            const std::vector<const std::vector<InstanceMask>*>& masks, int num_classes, int grid) {
  const auto n = static_cast<std::int64_t>(layouts.size());
  std::int64_t t_max = 0;
  for (const auto* l : layouts) t_max = std::max<std::int64_t>(t_max, static_cast<std::int64_t>(l->boxes.size()));
  if (n == 0 || t_max == 0) throw Error(ErrorCode::kInvalidArgument, "shape batch needs at least one instance (T = 0)");
  ShapeBatch batch;
  batch.input.boxes = torch::zeros({n, t_max, num_classes, grid, grid});
  batch.input.valid = torch::zeros({n, t_max}, torch::kBool);
  batch.masks = torch::zeros({n, t_max, grid, grid});
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& boxes = layouts[static_cast<std::size_t>(i)]->boxes;
    for (std::size_t t = 0; t < boxes.size(); ++t) {
      const auto ti = static_cast<std::int64_t>(t);
      batch.input.boxes[i][ti].copy_(label_grid_tensor(tensorize_box(boxes[t], grid, grid, num_classes)));
      batch.input.valid[i][ti] = true;
      if (!masks.empty() && masks[static_cast<std::size_t>(i)] != nullptr) {
        const auto& m = masks[static_cast<std::size_t>(i)]->at(t);
        if (m.height() != grid || m.width() != grid) throw Error(ErrorCode::kShapeMismatch, "mask grid mismatch");
        batch.masks[i][ti].copy_(mask_tensor(m));
      }
    }
  }
  return batch;
}

torch::Tensor crop_boxes(const torch::Tensor& images, const std::vector<std::int64_t>& image_index,
                         const std::vector<BoxSpec>& boxes, int crop_size) {
  if (image_index.size() != boxes.size()) throw Error(ErrorCode::kShapeMismatch, "one image index per box");
  const auto k = static_cast<std::int64_t>(boxes.size());
  if (k == 0) return torch::zeros({0, images.size(1), crop_size, crop_size}, images.options());
  auto theta = torch::zeros({k, 2, 3}, torch::kDouble);
  auto acc = theta.accessor<double, 3>();
  for (std::int64_t r = 0; r < k; ++r) {
    const auto& b = boxes[static_cast<std::size_t>(r)];
    const double side = 1.2 * std::max(b.w, b.h);
    acc[r][0][0] = side;
    acc[r][0][2] = 2.0 * (b.x + b.w / 2) - 1.0;
    acc[r][1][1] = side;
    acc[r][1][2] = 2.0 * (b.y + b.h / 2) - 1.0;
  }
  auto src = images.index_select(0, torch::tensor(image_index, torch::kLong));
  auto grid = F::affine_grid(theta.to(images.dtype()), {k, images.size(1), crop_size, crop_size}, false);
  return F::grid_sample(src, grid,
                        F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
}

namespace {

torch::Tensor scatter_instances(const torch::Tensor& flat_values, const torch::Tensor& valid) {
  auto out = torch::zeros({valid.numel()}, flat_values.options());
  auto idx = valid.flatten().nonzero().squeeze(1);
  return out.index_put({idx}, flat_values).reshape(valid.sizes());
}

// Discriminator logits for every valid instance, scattered back to [N, T].
torch::Tensor instance_logits(ShapeDiscriminator& disc, const ShapeBatch& batch, const torch::Tensor& masks) {
  const auto& boxes = batch.input.boxes;
  auto idx = batch.input.valid.flatten().nonzero().squeeze(1);
  auto b = boxes.flatten(0, 1).index_select(0, idx);
  auto m = masks.flatten(0, 1).index_select(0, idx);
  return scatter_instances(disc->forward(b, m), batch.input.valid);
}

}  // namespace

torch::Tensor shape_discriminator_loss(ShapeDiscriminator& d_inst, ShapeDiscriminator& d_global,
                                       const ShapeBatch& batch, const torch::Tensor& fake, const ShapeConfig& config,
                                       torch::Tensor* inst_value, torch::Tensor* global_value) {
  const auto& valid = batch.input.valid;
  auto real_logit = instance_logits(d_inst, batch, batch.masks);
  auto fake_logit = instance_logits(d_inst, batch, fake);
  auto inst = scene_mean(F::logsigmoid(real_logit) + F::logsigmoid(-fake_logit), valid);
  auto b_global = global_box_tensor(batch.input);
  auto real_g = d_global->forward(b_global, global_mask(batch.masks, valid));
  auto fake_g = d_global->forward(b_global, global_mask(fake, valid));
  auto glob = (F::logsigmoid(real_g) + F::logsigmoid(-fake_g)).mean();
  if (inst_value) *inst_value = inst.detach();
  if (global_value) *global_value = glob.detach();
  // Discriminators maximize the value functions.
  return -(config.lambda_inst * inst + config.lambda_global * glob);
}

ShapeLossTerms shape_generator_loss(ShapeDiscriminator& d_inst, ShapeDiscriminator& d_global, const ShapeBatch& batch,
                                    const torch::Tensor& fake, const ShapeConfig& config,
                                    nn::FeatureExtractor* extractor) {
  const auto& valid = batch.input.valid;
  ShapeLossTerms t;
  t.g_inst = -scene_mean(F::logsigmoid(instance_logits(d_inst, batch, fake)), valid);
  t.g_global = -F::logsigmoid(d_global->forward(global_box_tensor(batch.input), global_mask(fake, valid))).mean();
  auto idx = valid.flatten().nonzero().squeeze(1);
  auto grid = fake.size(2);
  auto f = fake.flatten(0, 1).index_select(0, idx).reshape({-1, 1, grid, grid});
  auto r = batch.masks.flatten(0, 1).index_select(0, idx).reshape({-1, 1, grid, grid});
  auto per_instance = reconstruction_loss(f, r, config.reconstruction, extractor);
  t.rec = scene_mean(scatter_instances(per_instance, valid), valid);
  t.g_loss = config.lambda_inst * t.g_inst + config.lambda_global * t.g_global + config.lambda_rec * t.rec;
  return t;
}

namespace {

void check_finite(const std::map<std::string, double>& values, Stage stage, int epoch) {
  for (const auto& [k, v] : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kDiverged, to_string(stage) + " training diverged at epoch " + std::to_string(epoch) +
                                            ": " + k + " is not finite");
    }
  }
}

double guard(const torch::Tensor& loss, const char* name, Stage stage, int epoch) {
  const double v = loss.item<double>();
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::kDiverged,
                to_string(stage) + " training diverged at epoch " + std::to_string(epoch) + ": " + name + " is not finite");
  }
  return v;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& order, int batch_size,
                                              std::size_t min_size) {
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be positive");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(i),
                               order.begin() + static_cast<std::ptrdiff_t>(
                                                   std::min(order.size(), i + static_cast<std::size_t>(batch_size))));
    if (b.size() >= min_size) out.push_back(std::move(b));
  }
  return out;
}

torch::optim::Adam make_adam(const std::vector<torch::Tensor>& params, const OptimizerSpec& spec) {
  return torch::optim::Adam(params, torch::optim::AdamOptions(spec.lr).betas({spec.beta1, spec.beta2}));
}

struct Accumulator {
  std::map<std::string, double> sums;
  int count = 0;
  void add(const std::map<std::string, double>& values) {
    for (const auto& [k, v] : values) sums[k] += v;
    ++count;
  }
  std::map<std::string, double> means() const {
    std::map<std::string, double> out;
    for (const auto& [k, v] : sums) out[k] = count > 0 ? v / count : 0.0;
    return out;
  }
};

// Common epoch loop: restores from a checkpoint when resuming, sets the
// learning rate, runs `epoch_fn` and writes the checkpoint.
class StageRunner {
 public:
  StageRunner(Stage stage, const Config& config, const TrainOptions& options)
      : stage_(stage), config_(config), options_(options) {}

  // Returns the first epoch to train.
  int restore(CheckpointReader* reader, std::vector<EpochLog>& history) {
    if (reader == nullptr) return 1;
    const auto& m = reader->manifest();
    if (m.extra.contains("history")) {
      for (const auto& e : m.extra.at("history")) history.push_back(parse_epoch_log(e));
    }
    return m.epoch + 1;
  }

  std::unique_ptr<CheckpointReader> open_resume() const {
    const auto path = checkpoint_path(options_.run_dir, stage_);
    if (!options_.resume || !std::filesystem::exists(path)) return nullptr;
    auto reader = std::make_unique<CheckpointReader>(path);
    reader->check_compatible(stage_, architecture_digest(config_, stage_), options_.allow_mismatch);
    return reader;
  }

  CheckpointManifest manifest(int epoch, const std::vector<EpochLog>& history, const Rng& rng, Json extra) const {
    CheckpointManifest m;
    m.stage = stage_;
    m.epoch = epoch;
    m.config = Json::parse(config_json(config_).dump());
    m.arch_digest = architecture_digest(config_, stage_);
    m.rng_state = rng.state();
    Json h = Json::array();
    for (const auto& e : history) h.push_back(epoch_log_json(e));
    extra["history"] = h;
    m.extra = std::move(extra);
    return m;
  }

  int last_epoch(int configured) const {
    return options_.stop_after_epoch > 0 ? std::min(configured, options_.stop_after_epoch) : configured;
  }

  void finish_epoch(EpochLog& log, std::vector<EpochLog>& history) const {
    check_finite(log.values, stage_, log.epoch);
    history.push_back(log);
    std::string line = to_string(stage_) + " epoch " + std::to_string(log.epoch) + " lr " + std::to_string(log.lr);
    for (const auto& [k, v] : log.values) line += " " + k + "=" + std::to_string(v);
    log::info(line);
    if (options_.on_epoch) options_.on_epoch(log);
  }

 private:
  Stage stage_;
  const Config& config_;
  const TrainOptions& options_;
};

void require_examples(const TrainingData& data) {
  if (data.train.empty()) throw Error(ErrorCode::kInvalidArgument, "training set is empty");
}

std::vector<std::string> corpus_of(const std::vector<DatasetExample>& examples) {
  std::vector<std::string> corpus;
  for (const auto& ex : examples) corpus.insert(corpus.end(), ex.captions.begin(), ex.captions.end());
  return corpus;
}

const std::string& pick_caption(const DatasetExample& ex, Rng& rng) {
  if (ex.captions.empty()) throw Error(ErrorCode::kInvalidArgument, "example without captions");
  return ex.captions[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(ex.captions.size()) - 1))];
}

std::vector<EpochLog> train_box(const Config& config, const TrainingData& data, const TrainOptions& options) {
  StageRunner runner(Stage::kBox, config, options);
  auto reader = runner.open_resume();
  torch::manual_seed(stage_seed(config, Stage::kBox, 0));
  TextModel text;
  text.vocab = reader ? Vocabulary::from_json(reader->manifest().extra.at("vocabulary"))
                      : Vocabulary::build(corpus_of(data.train), config.text.min_freq);
  text.encoder = TextEncoder(text.vocab.size(), config.text);
  auto generator = make_box_generator(config);
  std::vector<torch::Tensor> params = text.encoder->parameters();
  for (auto& p : generator->parameters()) params.push_back(p);
  auto adam = make_adam(params, config.box.optimizer);
  std::vector<EpochLog> history;
  if (reader) {
    reader->load_module("text_encoder", *text.encoder);
    reader->load_module("box_generator", *generator);
    reader->load_optimizer("adam", adam);
  }
  // Held-out NLL of the initialization, the reference for the training drop.
  Json extra{{"vocabulary", text.vocab.to_json()}, {"class_names", data.class_names}};
  if (reader && reader->manifest().extra.contains("initial_val_nll_per_object")) {
    extra["initial_val_nll_per_object"] = reader->manifest().extra.at("initial_val_nll_per_object");
  }
  const int first = runner.restore(reader.get(), history);
  reader.reset();
  if (first == 1 && !data.val.empty()) {
    text.encoder->eval();
    generator->eval();
    extra["initial_val_nll_per_object"] = layout_nll(text, generator, data.val);
  }
  const NllOptions nll{config.box.lambda_class, config.box.lambda_box, config.box.class_averaging};
  for (int epoch = first; epoch <= runner.last_epoch(config.box.epochs); ++epoch) {
    Rng rng(stage_seed(config, Stage::kBox, epoch));
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr_at(config.box.optimizer, epoch);
    set_learning_rate(adam, log.lr);
    text.encoder->train();
    generator->train();
    Accumulator acc;
    std::int64_t clamped = 0;
    std::int64_t rho_total = 0;
    for (const auto& batch : batches(shuffled(data.train.size(), rng), config.box.batch_size, 1)) {
      std::vector<std::string> texts;
      std::vector<LayoutSequence> layouts;
      for (auto i : batch) {
        if (data.train[i].layout.boxes.empty()) continue;
        texts.push_back(pick_caption(data.train[i], rng));
        layouts.push_back(data.train[i].layout);
      }
      if (layouts.empty()) continue;
      auto s = encode_texts(text.encoder, text.vocab, texts);
      auto result = sequence_nll(generator, s, layouts, nll);
      adam.zero_grad();
      result.loss.backward();
      adam.step();
      ++log.g_steps;
      clamped += result.rho_clamped;
      rho_total += result.rho_total;
      acc.add({{"loss", guard(result.loss, "loss", Stage::kBox, epoch)},
               {"class_nll", result.class_term.item<double>()},
               {"coord_nll", result.coord_term.item<double>()}});
    }
    log.values = acc.means();
    log.values["rho_clamp_rate"] = rho_total > 0 ? static_cast<double>(clamped) / static_cast<double>(rho_total) : 0.0;
    if (!data.val.empty()) {
      text.encoder->eval();
      generator->eval();
      log.values["val_nll_per_object"] = layout_nll(text, generator, data.val);
    }
    runner.finish_epoch(log, history);
    CheckpointWriter writer(runner.manifest(epoch, history, rng, extra));
    writer.add_module("text_encoder", *text.encoder);
    writer.add_module("box_generator", *generator);
    writer.add_optimizer("adam", adam);
    writer.save(checkpoint_path(options.run_dir, Stage::kBox));
  }
  return history;
}

struct CropSet {
  torch::Tensor crops;   // [K, 3, c, c]
  torch::Tensor labels;  // [K]
};

CropSet example_crops(const std::vector<DatasetExample>& examples, int crop_size) {
  std::vector<torch::Tensor> parts;
  std::vector<std::int64_t> labels;
  for (const auto& ex : examples) {
    if (ex.layout.boxes.empty()) continue;
    auto image = image_tensor(ex.image).unsqueeze(0);
    std::vector<std::int64_t> index(ex.layout.boxes.size(), 0);
    parts.push_back(crop_boxes(image, index, ex.layout.boxes, crop_size));
    for (const auto& b : ex.layout.boxes) labels.push_back(b.label);
  }
  if (parts.empty()) throw Error(ErrorCode::kInvalidArgument, "no objects to crop");
  return {torch::cat(parts, 0), torch::tensor(labels, torch::kLong)};
}

std::vector<EpochLog> train_extractor(const Config& config, const TrainingData& data, const TrainOptions& options) {
  StageRunner runner(Stage::kExtractor, config, options);
  auto reader = runner.open_resume();
  torch::manual_seed(stage_seed(config, Stage::kExtractor, 0));
  auto classifier = make_classifier(config);
  auto adam = make_adam(classifier->parameters(), config.extractor.optimizer);
  std::vector<EpochLog> history;
  if (reader) {
    reader->load_module("classifier", *classifier);
    reader->load_optimizer("adam", adam);
  }
  const int first = runner.restore(reader.get(), history);
  reader.reset();
  const auto train = example_crops(data.train, config.extractor.crop_size);
  std::optional<CropSet> val;
  if (!data.val.empty()) val = example_crops(data.val, config.extractor.crop_size);
  for (int epoch = first; epoch <= runner.last_epoch(config.extractor.epochs); ++epoch) {
    Rng rng(stage_seed(config, Stage::kExtractor, epoch));
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr_at(config.extractor.optimizer, epoch);
    set_learning_rate(adam, log.lr);
    classifier->train();
    Accumulator acc;
    for (const auto& batch : batches(shuffled(static_cast<std::size_t>(train.crops.size(0)), rng),
                                     config.extractor.batch_size, 1)) {
      std::vector<std::int64_t> idx(batch.begin(), batch.end());
      auto index = torch::tensor(idx, torch::kLong);
      auto logits = classifier->forward(train.crops.index_select(0, index));
      auto loss = F::cross_entropy(logits, train.labels.index_select(0, index));
      adam.zero_grad();
      loss.backward();
      adam.step();
      ++log.g_steps;
      acc.add({{"loss", guard(loss, "loss", Stage::kExtractor, epoch)}});
    }
    log.values = acc.means();
    if (val) {
      torch::NoGradGuard no_grad;
      classifier->eval();
      auto pred = classifier->forward(val->crops).argmax(1);
      log.values["val_accuracy"] = pred.eq(val->labels).to(torch::kDouble).mean().item<double>();
    }
    runner.finish_epoch(log, history);
    CheckpointWriter writer(runner.manifest(epoch, history, rng, Json::object()));
    writer.add_module("classifier", *classifier);
    writer.add_optimizer("adam", adam);
    writer.save(checkpoint_path(options.run_dir, Stage::kExtractor));
  }
  return history;
}

std::optional<nn::FeatureExtractor> reconstruction_extractor(ReconstructionLoss kind, const Config& config,
                                                             const TrainOptions& options) {
  if (kind != ReconstructionLoss::kPerceptual) return std::nullopt;
  try {
    return load_feature_extractor(options.run_dir, config);
  } catch (const Error& e) {
    throw Error(ErrorCode::kNotLoaded, "perceptual loss needs a trained extractor stage: " + std::string(e.what()));
  }
}

std::vector<EpochLog> train_shape(const Config& config, const TrainingData& data, const TrainOptions& options) {
  StageRunner runner(Stage::kShape, config, options);
  auto reader = runner.open_resume();
  auto extractor = reconstruction_extractor(config.shape.reconstruction, config, options);
  torch::manual_seed(stage_seed(config, Stage::kShape, 0));
  auto generator = make_shape_generator(config);
  auto d_inst = make_shape_discriminator(config);
  auto d_global = make_shape_discriminator(config);
  auto g_opt = make_adam(generator->parameters(), config.shape.optimizer);
  auto d_inst_opt = make_adam(d_inst->parameters(), config.shape.optimizer);
  auto d_global_opt = make_adam(d_global->parameters(), config.shape.optimizer);
  std::vector<EpochLog> history;
  if (reader) {
    reader->load_module("shape_generator", *generator);
    reader->load_module("shape_disc_inst", *d_inst);
    reader->load_module("shape_disc_global", *d_global);
    reader->load_optimizer("generator", g_opt);
    reader->load_optimizer("disc_inst", d_inst_opt);
    reader->load_optimizer("disc_global", d_global_opt);
  }
  const int first = runner.restore(reader.get(), history);
  reader.reset();
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    if (!data.train[i].layout.boxes.empty()) usable.push_back(i);
  }
  if (usable.empty()) throw Error(ErrorCode::kInvalidArgument, "no training scene has objects");
  nn::FeatureExtractor* ext = extractor ? &*extractor : nullptr;
  for (int epoch = first; epoch <= runner.last_epoch(config.shape.epochs); ++epoch) {
    Rng rng(stage_seed(config, Stage::kShape, epoch));
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr_at(config.shape.optimizer, epoch);
    for (auto* opt : {&g_opt, &d_inst_opt, &d_global_opt}) set_learning_rate(*opt, log.lr);
    generator->train();
    d_inst->train();
    d_global->train();
    Accumulator acc;
    for (const auto& batch_idx : batches(shuffled(usable.size(), rng), config.shape.batch_size, 1)) {
      std::vector<const LayoutSequence*> layouts;
      std::vector<const std::vector<InstanceMask>*> masks;
      for (auto k : batch_idx) {
        const auto& ex = data.train[usable[k]];
        layouts.push_back(&ex.layout);
        masks.push_back(&ex.instance_masks);
      }
      auto batch = make_shape_batch(layouts, masks, config.data.num_classes, config.data.image_size);
      auto z = normal_tensor(rng, {batch.masks.size(0), batch.masks.size(1), generator->noise_dim()});

      torch::Tensor inst_value, global_value;
      auto fake = generator->forward(batch.input, z);
      auto d_loss =
          shape_discriminator_loss(d_inst, d_global, batch, fake.detach(), config.shape, &inst_value, &global_value);
      d_inst_opt.zero_grad();
      d_global_opt.zero_grad();
      d_loss.backward();
      d_inst_opt.step();
      d_global_opt.step();
      ++log.d_steps;

      auto terms = shape_generator_loss(d_inst, d_global, batch, fake, config.shape, ext);
      g_opt.zero_grad();
      terms.g_loss.backward();
      g_opt.step();
      ++log.g_steps;
      acc.add({{"d_loss", guard(d_loss, "d_loss", Stage::kShape, epoch)},
               {"g_loss", guard(terms.g_loss, "g_loss", Stage::kShape, epoch)},
               {"g_inst", terms.g_inst.item<double>()},
               {"g_global", terms.g_global.item<double>()},
               {"rec", terms.rec.item<double>()},
               {"inst_value", inst_value.item<double>()},
               {"global_value", global_value.item<double>()}});
    }
    log.values = acc.means();
    runner.finish_epoch(log, history);
    CheckpointWriter writer(runner.manifest(epoch, history, rng, Json::object()));
    writer.add_module("shape_generator", *generator);
    writer.add_module("shape_disc_inst", *d_inst);
    writer.add_module("shape_disc_global", *d_global);
    writer.add_optimizer("generator", g_opt);
    writer.add_optimizer("disc_inst", d_inst_opt);
    writer.add_optimizer("disc_global", d_global_opt);
    writer.save(checkpoint_path(options.run_dir, Stage::kShape));
  }
  return history;
}

std::vector<EpochLog> train_image(const Config& config, const TrainingData& data, const TrainOptions& options) {
  StageRunner runner(Stage::kImage, config, options);
  auto reader = runner.open_resume();
  auto extractor = reconstruction_extractor(config.image.reconstruction, config, options);
  auto box_stage = load_box_stage(options.run_dir, config, options.allow_mismatch);
  std::optional<ShapeGenerator> shape;
  if (config.image.train_on_predicted_layouts && config.pipeline.use_shape_generator) {
    shape = load_shape_generator(options.run_dir, config, options.allow_mismatch);
  }
  const int num_classes = config.data.num_classes;
  const int size = config.data.image_size;

  // Inputs are fixed for the whole stage: label maps, images and the frozen
  // text embeddings of every caption.
  std::vector<torch::Tensor> maps, images, embeddings;
  Rng prep_rng(stage_seed(config, Stage::kImage, 0) ^ 0x1ULL);
  for (const auto& ex : data.train) {
    SemanticLabelMap map;
    if (!config.pipeline.use_shape_generator) {
      map = box_label_map(ex.layout, size, size);
    } else if (shape && !ex.layout.boxes.empty()) {
      torch::NoGradGuard no_grad;
      auto batch = make_shape_batch({&ex.layout}, {}, num_classes, size);
      auto z = normal_tensor(prep_rng, {1, batch.masks.size(1), (*shape)->noise_dim()});
      auto pred = (*shape)->forward(batch.input, z)[0];
      std::vector<InstanceMask> masks;
      std::vector<int> labels;
      for (std::size_t t = 0; t < ex.layout.boxes.size(); ++t) {
        masks.push_back(tensor_mask(pred[static_cast<std::int64_t>(t)]));
        labels.push_back(ex.layout.boxes[t].label);
      }
      map = compose_label_map(masks, labels, num_classes, size, size, config.pipeline.mask_threshold);
    } else {
      map = example_label_map(ex, num_classes, config.pipeline.mask_threshold);
    }
    maps.push_back(label_grid_tensor(map));
    images.push_back(image_tensor(ex.image));
    embeddings.push_back(box_stage.text.embed(ex.captions));
  }
  require_examples(data);

  torch::manual_seed(stage_seed(config, Stage::kImage, 0));
  auto generator = make_image_generator(config);
  auto disc = make_image_discriminator(config);
  auto g_opt = make_adam(generator->parameters(), config.image.optimizer);
  auto d_opt = make_adam(disc->parameters(), config.image.optimizer);
  std::vector<EpochLog> history;
  if (reader) {
    reader->load_module("image_generator", *generator);
    reader->load_module("image_discriminator", *disc);
    reader->load_optimizer("generator", g_opt);
    reader->load_optimizer("discriminator", d_opt);
  }
  const int first = runner.restore(reader.get(), history);
  reader.reset();
  nn::FeatureExtractor* ext = extractor ? &*extractor : nullptr;
  const Json extra{{"text_source", checkpoint_digest(checkpoint_path(options.run_dir, Stage::kBox))}};
  for (int epoch = first; epoch <= runner.last_epoch(config.image.epochs); ++epoch) {
    Rng rng(stage_seed(config, Stage::kImage, epoch));
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr_at(config.image.optimizer, epoch);
    set_learning_rate(g_opt, log.lr);
    set_learning_rate(d_opt, log.lr);
    generator->train();
    disc->train();
    Accumulator acc;
    // The mismatched text comes from another row, so batches need two rows.
    for (const auto& batch : batches(shuffled(data.train.size(), rng), config.image.batch_size, 2)) {
      std::vector<torch::Tensor> m, x, s;
      for (auto i : batch) {
        m.push_back(maps[i]);
        x.push_back(images[i]);
        const auto& e = embeddings[i];
        s.push_back(e[rng.uniform_int(0, e.size(0) - 1)]);
      }
      auto label_map = torch::stack(m);
      auto real = torch::stack(x);
      auto text = torch::stack(s);
      const auto n = static_cast<std::int64_t>(batch.size());
      auto wrong = mismatched_embeddings(text, rng.uniform_int(1, n - 1));
      auto z = normal_tensor(rng, {n, generator->noise_dim()});

      auto fake = generator->forward(label_map, text, z);
      auto value = image_adv_value_from_logits(disc->forward(label_map, text, real), disc->forward(label_map, wrong, real),
                                               disc->forward(label_map, text, fake.detach()));
      auto d_loss = -value;
      d_opt.zero_grad();
      d_loss.backward();
      d_opt.step();
      ++log.d_steps;

      auto g_adv = -F::logsigmoid(disc->forward(label_map, text, fake)).mean();
      auto rec = reconstruction_loss(fake, real, config.image.reconstruction, ext).mean();
      auto g_loss = config.image.lambda_adv * g_adv + config.image.lambda_rec * rec;
      g_opt.zero_grad();
      g_loss.backward();
      g_opt.step();
      ++log.g_steps;
      acc.add({{"d_loss", guard(d_loss, "d_loss", Stage::kImage, epoch)},
               {"g_loss", guard(g_loss, "g_loss", Stage::kImage, epoch)},
               {"g_adv", g_adv.item<double>()},
               {"rec", rec.item<double>()},
               {"adv_value", value.item<double>()}});
    }
    log.values = acc.means();
    runner.finish_epoch(log, history);
    CheckpointWriter writer(runner.manifest(epoch, history, rng, extra));
    writer.add_module("image_generator", *generator);
    writer.add_module("image_discriminator", *disc);
    writer.add_optimizer("generator", g_opt);
    writer.add_optimizer("discriminator", d_opt);
    writer.save(checkpoint_path(options.run_dir, Stage::kImage));
  }
  return history;
}

}  // namespace

std::vector<EpochLog> train_stage(Stage stage, const Config& config, const TrainingData& data,
                                  const TrainOptions& options) {
  require_examples(data);
  if (options.run_dir.empty()) throw Error(ErrorCode::kInvalidArgument, "training needs a run directory");
  std::filesystem::create_directories(options.run_dir);
  switch (stage) {
    case Stage::kBox:
      return train_box(config, data, options);
    case Stage::kExtractor:
      return train_extractor(config, data, options);
    case Stage::kShape:
      return train_shape(config, data, options);
    case Stage::kImage:
      return train_image(config, data, options);
  }
  return {};
}

}  // namespace hiergen
