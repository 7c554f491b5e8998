#pragma once

// Single-file checkpoint archive: a JSON manifest plus named parameter and
// optimizer blobs. Writes go to a temporary file that is renamed into place.

#include <filesystem>
#include <map>
#include <string>

#include <torch/torch.h>

#include "hiergen/config.hpp"
#include "hiergen/json_io.hpp"

namespace hiergen {

inline constexpr const char* kCheckpointFormat = "hiergen-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointManifest {
  Stage stage = Stage::kBox;
  int epoch = 0;
  Json config;              // full run configuration
  std::string arch_digest;  // architecture_digest(config, stage)
  std::string rng_state;
  Json extra;               // stage-specific payload (vocabulary, metrics)
};

Json manifest_json(const CheckpointManifest& manifest);
CheckpointManifest parse_manifest(const Json& value);

class CheckpointWriter {
 public:
  explicit CheckpointWriter(CheckpointManifest manifest) : manifest_(std::move(manifest)) {}
  void add_module(const std::string& name, torch::nn::Module& module);
  void add_optimizer(const std::string& name, torch::optim::Optimizer& optimizer);
  void save(const std::filesystem::path& path);

 private:
  CheckpointManifest manifest_;
  torch::serialize::OutputArchive archive_;
};

class CheckpointReader {
 public:
  // Throws kIo / kParse when the file is missing or not a checkpoint.
  explicit CheckpointReader(const std::filesystem::path& path);

  const CheckpointManifest& manifest() const { return manifest_; }
  // Refuses (kConfigMismatch) when the stage or architecture digest differs,
  // unless allow_mismatch is set; parameter shapes are always checked.
  void check_compatible(Stage stage, const std::string& arch_digest, bool allow_mismatch = false) const;
  void load_module(const std::string& name, torch::nn::Module& module);
  void load_optimizer(const std::string& name, torch::optim::Optimizer& optimizer);
  bool has(const std::string& key);

 private:
  std::filesystem::path path_;
  CheckpointManifest manifest_;
  torch::serialize::InputArchive archive_;
};

// SHA-256 over the manifest and the named model tensors in key order;
// optimizer state is excluded.
std::string checkpoint_digest(const std::filesystem::path& path);

}  // namespace hiergen
