#pragma once

// End-to-end inference: text -> layout -> instance masks -> image. Any stage
// can be short-circuited by supplying its output. Every stochastic stage draws
// from its own generator derived from the request seed.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hiergen/config.hpp"
#include "hiergen/image_io.hpp"
#include "hiergen/layout.hpp"
#include "hiergen/models.hpp"

namespace hiergen {

struct PipelineRequest {
  std::string text;
  std::uint64_t seed = 0;
  std::optional<LayoutSequence> layout;
  std::optional<std::vector<InstanceMask>> masks;  // needs `layout`
};

struct PipelineResult {
  LayoutSequence layout;
  bool truncated = false;
  std::vector<InstanceMask> masks;
  RgbImage image;
};

class Pipeline {
 public:
  // Loads <run_dir>/{box,shape,image}.ckpt. Without an explicit config the
  // one stored in the box checkpoint is used.
  static std::shared_ptr<const Pipeline> load(const std::filesystem::path& run_dir,
                                              const std::optional<Config>& config = std::nullopt);
  // Untrained models with seeded initialization; vocabulary built from `corpus`.
  static std::shared_ptr<const Pipeline> random(const Config& config, const std::vector<std::string>& corpus,
                                                std::uint64_t seed);

  const Config& config() const { return config_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  int grid() const { return config_.data.image_size; }
  const std::string& model_version() const { return model_version_; }

  std::pair<LayoutSequence, bool> sample_layout(const std::string& text, std::uint64_t seed) const;
  std::vector<InstanceMask> generate_masks(const LayoutSequence& layout, std::uint64_t seed) const;
  RgbImage render(const LayoutSequence& layout, const std::vector<InstanceMask>& masks, const std::string& text,
                  std::uint64_t seed) const;
  PipelineResult generate(const PipelineRequest& request) const;

 private:
  Pipeline() = default;
  torch::Tensor embed(const std::string& text) const;

  Config config_;
  std::vector<std::string> class_names_;
  std::string model_version_;
  mutable TextModel text_;
  mutable BoxGenerator box_{nullptr};
  mutable ShapeGenerator shape_{nullptr};
  mutable ImageGenerator image_{nullptr};
};

}  // namespace hiergen
