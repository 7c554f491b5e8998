#include "hiergen/hiergen.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>

#include "hiergen/error.hpp"
#include "hiergen/evaluation.hpp"
#include "hiergen/json_io.hpp"
#include "hiergen/log.hpp"
#include "hiergen/model_eval.hpp"
#include "hiergen/pipeline.hpp"
#include "hiergen/service.hpp"
#include "hiergen/training.hpp"

struct hg_pipeline {
  std::shared_ptr<const hiergen::Pipeline> pipeline;
};

namespace {

thread_local std::string last_error;
thread_local std::string last_field;

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename Fn>
hg_status guarded(Fn&& fn) {
  last_error.clear();
  last_field.clear();
  try {
    fn();
    return HG_OK;
  } catch (const hiergen::Error& e) {
    last_error = e.what();
    last_field = e.field_path();
    return static_cast<hg_status>(static_cast<int>(e.code()));
  } catch (const std::exception& e) {
    last_error = e.what();
    return HG_INTERNAL;
  }
}

void require(const void* p, const char* name) {
  if (p == nullptr) throw hiergen::Error(hiergen::ErrorCode::kInvalidArgument, std::string(name) + " must not be NULL", name);
}

hiergen::Config config_from(const char* path) {
  return path && *path ? hiergen::load_config(path) : hiergen::Config{};
}

}  // namespace

extern "C" {

const char* hg_version(void) { return "0.1.0"; }
const char* hg_last_error(void) { return last_error.c_str(); }
const char* hg_last_error_field(void) { return last_field.c_str(); }
void hg_free_string(char* s) { std::free(s); }
void hg_free_bytes(uint8_t* bytes) { std::free(bytes); }

void hg_set_log_level(int level) {
  hiergen::log::set_level(static_cast<hiergen::log::Level>(std::clamp(level, 0, 4)));
}

hg_status hg_config_resolve(const char* config_path, char** config_json) {
  return guarded([&] {
    require(config_json, "config_json");
    *config_json = dup_string(hiergen::config_json(config_from(config_path)).dump(2));
  });
}

hg_status hg_make_shapeworld(const char* config_path, const char* out_dir, uint64_t count, uint64_t seed,
                             char** digest) {
  return guarded([&] {
    require(out_dir, "out_dir");
    auto config = config_from(config_path);
    config.data.seed = seed;
    const auto hex = hiergen::write_shapeworld_dataset(out_dir, hiergen::shapeworld_config(config.data), count);
    if (digest) *digest = dup_string(hex);
  });
}

hg_status hg_train(const char* config_path, const char* stage, const char* run_dir, int resume, int allow_mismatch,
                   const uint64_t* seed, char** history_json) {
  return guarded([&] {
    require(stage, "stage");
    require(run_dir, "run_dir");
    auto config = config_from(config_path);
    if (seed) config.seed = *seed;
    const auto s = hiergen::parse_stage(stage);
    const auto data = hiergen::load_training_data(config);
    hiergen::TrainOptions options;
    options.run_dir = run_dir;
    options.resume = resume != 0;
    options.allow_mismatch = allow_mismatch != 0;
    const auto history = hiergen::train_stage(s, config, data, options);
    if (history_json) {
      hiergen::Json out = hiergen::Json::array();
      for (const auto& e : history) out.push_back(hiergen::epoch_log_json(e));
      *history_json = dup_string(out.dump(2));
    }
  });
}

hg_status hg_eval(const char* config_path, const char* stage, const char* run_dir, uint64_t seed, char** report_json) {
  return guarded([&] {
    require(stage, "stage");
    require(run_dir, "run_dir");
    require(report_json, "report_json");
    auto config = config_from(config_path);
    auto data = hiergen::load_training_data(config);
    const auto report = hiergen::evaluate_stage(hiergen::parse_stage(stage), run_dir, config, data.val, seed);
    *report_json = dup_string(hiergen::report_json(report).dump(2));
  });
}

hg_status hg_pipeline_load(const char* run_dir, const char* config_path, hg_pipeline** out) {
  return guarded([&] {
    require(run_dir, "run_dir");
    require(out, "out");
    std::optional<hiergen::Config> config;
    if (config_path && *config_path) config = hiergen::load_config(config_path);
    *out = new hg_pipeline{hiergen::Pipeline::load(run_dir, config)};
  });
}

void hg_pipeline_free(hg_pipeline* pipeline) { delete pipeline; }

hg_status hg_pipeline_meta(const hg_pipeline* pipeline, char** meta_json) {
  return guarded([&] {
    require(pipeline, "pipeline");
    require(meta_json, "meta_json");
    hiergen::Json j;
    j["classes"] = pipeline->pipeline->class_names();
    j["grid"] = pipeline->pipeline->grid();
    j["model_version"] = pipeline->pipeline->model_version();
    *meta_json = dup_string(j.dump());
  });
}

hg_status hg_sample_layout(const hg_pipeline* pipeline, const char* text, uint64_t seed, char** layout_json) {
  return guarded([&] {
    require(pipeline, "pipeline");
    require(text, "text");
    require(layout_json, "layout_json");
    auto [layout, truncated] = pipeline->pipeline->sample_layout(text, seed);
    *layout_json = dup_string(hiergen::layout_json(layout).dump());
  });
}

hg_status hg_generate(const hg_pipeline* pipeline, const char* text, uint64_t seed, const char* layout_json,
                      char** layout_out, char** masks_out, uint8_t** png, size_t* png_size) {
  return guarded([&] {
    require(pipeline, "pipeline");
    hiergen::PipelineRequest request;
    request.text = text ? text : "";
    request.seed = seed;
    if (layout_json && *layout_json) request.layout = hiergen::layout_from_json(layout_json);
    const auto& p = *pipeline->pipeline;
    const auto result = p.generate(request);
    if (layout_out) *layout_out = dup_string(hiergen::layout_json(result.layout).dump(2));
    if (masks_out) {
      hiergen::Json masks = hiergen::Json::array();
      for (const auto& m : result.masks) {
        masks.push_back(hiergen::rle_json(hiergen::rle_encode(m, p.config().pipeline.mask_threshold)));
      }
      *masks_out = dup_string(masks.dump());
    }
    if (png) {
      require(png_size, "png_size");
      const auto bytes = hiergen::encode_png(result.image);
      *png = static_cast<uint8_t*>(std::malloc(bytes.size()));
      if (!*png) throw std::bad_alloc();
      std::memcpy(*png, bytes.data(), bytes.size());
      *png_size = bytes.size();
    }
  });
}

hg_status hg_serve(const char* run_dir, const char* config_path, const char* address) {
  return guarded([&] {
    require(run_dir, "run_dir");
    std::string addr = address && *address ? address : "";
    if (addr.empty()) {
      const char* env = std::getenv("HIERGEN_ADDR");
      addr = env && *env ? env : "127.0.0.1:8080";
    }
    const auto [host, port] = hiergen::parse_listen_address(addr);
    std::optional<hiergen::Config> config;
    if (config_path && *config_path) config = hiergen::load_config(config_path);
    const std::string dir = run_dir;
    hiergen::Service service([dir, config] { return hiergen::Pipeline::load(dir, config); });
    hiergen::log::info("listening on ", host, ":", port);
    if (!service.listen(host, port)) {
      throw hiergen::Error(hiergen::ErrorCode::kIo, "cannot listen on " + addr, "addr");
    }
  });
}

}  // extern "C"
