#include "hiergen/checkpoint.hpp"

#include <algorithm>

#include "hiergen/digest.hpp"
#include "hiergen/error.hpp"

namespace hiergen {

Json manifest_json(const CheckpointManifest& m) {
  Json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["stage"] = to_string(m.stage);
  j["epoch"] = m.epoch;
  j["arch_digest"] = m.arch_digest;
  j["rng_state"] = m.rng_state;
  j["config"] = m.config;
  j["extra"] = m.extra.is_null() ? Json::object() : m.extra;
  return j;
}

CheckpointManifest parse_manifest(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw Error(ErrorCode::kParse, "not a checkpoint manifest", "format");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::kConfigMismatch, "unsupported checkpoint version", "version");
    }
    CheckpointManifest m;
    m.stage = parse_stage(j.at("stage").get<std::string>());
    m.epoch = j.at("epoch").get<int>();
    m.arch_digest = j.at("arch_digest").get<std::string>();
    m.rng_state = j.at("rng_state").get<std::string>();
    m.config = j.at("config");
    m.extra = j.value("extra", Json::object());
    return m;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("checkpoint manifest: ") + e.what());
  }
}

void CheckpointWriter::add_module(const std::string& name, torch::nn::Module& module) {
  for (const auto& item : module.named_parameters(true)) {
    archive_.write(name + "/" + item.key(), item.value().detach());
  }
  for (const auto& item : module.named_buffers(true)) {
    archive_.write(name + "/" + item.key(), item.value().detach(), /*is_buffer=*/true);
  }
}

void CheckpointWriter::add_optimizer(const std::string& name, torch::optim::Optimizer& optimizer) {
  torch::serialize::OutputArchive sub;
  optimizer.save(sub);
  archive_.write("optim/" + name, sub);
}

void CheckpointWriter::save(const std::filesystem::path& path) {
  archive_.write("manifest", c10::IValue(manifest_json(manifest_).dump()));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  try {
    archive_.save_to(tmp.string());
  } catch (const c10::Error& e) {
    throw Error(ErrorCode::kIo, "cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot rename checkpoint into " + path.string() + ": " + ec.message());
}

CheckpointReader::CheckpointReader(const std::filesystem::path& path) : path_(path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kIo, "checkpoint not found: " + path.string());
  try {
    archive_.load_from(path.string());
    c10::IValue value;
    archive_.read("manifest", value);
    manifest_ = parse_manifest(Json::parse(value.toStringRef()));
  } catch (const c10::Error& e) {
    throw Error(ErrorCode::kParse, "cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParse, "checkpoint manifest is not JSON: " + std::string(e.what()));
  }
}

void CheckpointReader::check_compatible(Stage stage, const std::string& arch_digest, bool allow_mismatch) const {
  if (manifest_.stage != stage) {
    throw Error(ErrorCode::kConfigMismatch,
                "checkpoint holds stage '" + to_string(manifest_.stage) + "', expected '" + to_string(stage) + "'",
                "stage");
  }
  if (manifest_.arch_digest != arch_digest && !allow_mismatch) {
    throw Error(ErrorCode::kConfigMismatch,
                "checkpoint architecture differs from the configuration (pass the override flag to force)",
                "arch_digest");
  }
}

bool CheckpointReader::has(const std::string& key) {
  c10::IValue unused;
  return archive_.try_read(key, unused);
}

void CheckpointReader::load_module(const std::string& name, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto load = [&](const std::string& key, torch::Tensor& target, bool is_buffer) {
    torch::Tensor stored;
    if (!archive_.try_read(name + "/" + key, stored, is_buffer)) {
      throw Error(ErrorCode::kConfigMismatch, "checkpoint lacks tensor '" + name + "/" + key + "'", name + "/" + key);
    }
    if (stored.sizes() != target.sizes()) {
      throw Error(ErrorCode::kConfigMismatch,
                  "tensor '" + name + "/" + key + "' has shape " + c10::str(stored.sizes()) + ", expected " +
                      c10::str(target.sizes()),
                  name + "/" + key);
    }
    target.copy_(stored);
  };
  for (auto& item : module.named_parameters(true)) load(item.key(), item.value(), false);
  for (auto& item : module.named_buffers(true)) load(item.key(), item.value(), true);
}

void CheckpointReader::load_optimizer(const std::string& name, torch::optim::Optimizer& optimizer) {
  torch::serialize::InputArchive sub;
  if (!archive_.try_read("optim/" + name, sub)) {
    throw Error(ErrorCode::kConfigMismatch, "checkpoint lacks optimizer state '" + name + "'");
  }
  try {
    optimizer.load(sub);
  } catch (const c10::Error& e) {
    throw Error(ErrorCode::kConfigMismatch, std::string("optimizer state does not match: ") + e.what_without_backtrace());
  }
}

std::string checkpoint_digest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kIo, "checkpoint not found: " + path.string());
  // Archive bytes are not stable (optimizer state is keyed by tensor
  // addresses), so the digest covers the manifest and named tensors only.
  torch::serialize::InputArchive archive;
  Digest digest;
  try {
    archive.load_from(path.string());
    auto keys = archive.keys();
    std::sort(keys.begin(), keys.end());
    for (const auto& key : keys) {
      if (key.rfind("optim/", 0) == 0) continue;
      c10::IValue value;
      archive.read(key, value);
      digest.update(key);
      digest.update(std::string_view("\0", 1));
      if (value.isString()) {
        digest.update(value.toStringRef());
      } else if (value.isTensor()) {
        auto t = value.toTensor().contiguous();
        digest.update(std::string(c10::toString(t.scalar_type())) + c10::str(t.sizes()));
        digest.update(std::span<const unsigned char>(static_cast<const unsigned char*>(t.data_ptr()), t.nbytes()));
      }
    }
  } catch (const c10::Error& e) {
    throw Error(ErrorCode::kParse, "cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  return digest.hex();
}

}  // namespace hiergen
