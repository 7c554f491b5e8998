// Command-line front end over the C API.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "hiergen/hiergen.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Owned {
  char* s = nullptr;
  ~Owned() { hg_free_string(s); }
  std::string str() const { return s ? s : ""; }
};

const char* status_name(hg_status status) {
  switch (status) {
    case HG_OK: return "ok";
    case HG_INVALID_ARGUMENT: return "invalid_argument";
    case HG_INVALID_LABEL: return "invalid_label";
    case HG_SHAPE_MISMATCH: return "shape_mismatch";
    case HG_OUT_OF_RANGE: return "out_of_range";
    case HG_IO: return "io";
    case HG_PARSE: return "parse";
    case HG_CONFIG_MISMATCH: return "config_mismatch";
    case HG_NON_FINITE: return "non_finite";
    case HG_NOT_LOADED: return "not_loaded";
    case HG_DIVERGED: return "diverged";
    case HG_INTERNAL: return "internal";
  }
  return "unknown";
}

int fail(hg_status status) {
  std::cerr << "error (" << status << " " << status_name(status) << "): " << hg_last_error();
  if (*hg_last_error_field()) std::cerr << " [" << hg_last_error_field() << "]";
  std::cerr << "\n";
  return status == HG_INVALID_ARGUMENT ? kExitUsage : kExitFailure;
}

bool write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  return static_cast<bool>(out);
}

std::optional<std::string> read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* c_str_or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

// `--checkpoint` accepts a run directory or one of its <stage>.ckpt files.
std::string run_dir_of(const std::string& checkpoint) {
  const fs::path p(checkpoint);
  if (p.extension() == ".ckpt") return p.has_parent_path() ? p.parent_path().string() : ".";
  return checkpoint;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical text-to-image generation: text -> layout -> masks -> image"};
  app.require_subcommand(1);
  std::string config_path;
  int log_level = 1;
  app.add_option("--config", config_path, "JSON config overriding the defaults")->check(CLI::ExistingFile);
  app.add_option("--log-level", log_level, "0 debug, 1 info, 2 warn, 3 error, 4 off")->check(CLI::Range(0, 4));

  auto* make = app.add_subcommand("make-shapeworld", "Write a procedural shape-world dataset");
  std::uint64_t count = 0;
  std::uint64_t data_seed = 0;
  std::string data_out;
  make->add_option("--count", count, "Number of examples")->required();
  make->add_option("--seed", data_seed, "Dataset seed")->required();
  make->add_option("--out", data_out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one stage into a run directory");
  std::string stage;
  std::string run_dir;
  bool resume = false;
  bool allow_mismatch = false;
  std::optional<std::uint64_t> train_seed;
  const auto stages = CLI::IsMember({"box", "shape", "image", "extractor"});
  train->add_option("--stage", stage, "Stage to train")->required()->check(stages);
  train->add_option("--run-dir,--out", run_dir, "Checkpoint directory")->required();
  train->add_flag("--resume", resume, "Continue from the stage checkpoint in the run directory");
  train->add_flag("--allow-mismatch", allow_mismatch, "Resume even if the config differs from the checkpoint");
  train->add_option("--seed", train_seed, "Override the configured training seed");

  auto* sample = app.add_subcommand("sample", "Sample a layout for a caption; prints layout JSON");
  std::string text;
  std::uint64_t seed = 0;
  sample->add_option("--run-dir", run_dir, "Run directory with trained checkpoints")->required();
  sample->add_option("--text", text, "Caption")->required();
  sample->add_option("--seed", seed, "Sampling seed")->required();

  auto* generate = app.add_subcommand("generate", "Run the full pipeline; writes layout.json, masks.json, image.png");
  std::string out_dir;
  std::string layout_path;
  generate->add_option("--run-dir", run_dir, "Run directory with trained checkpoints")->required();
  generate->add_option("--text", text, "Caption")->required();
  generate->add_option("--seed", seed, "Generation seed")->required();
  generate->add_option("--out", out_dir, "Output directory")->required();
  generate->add_option("--layout", layout_path, "Layout JSON to use instead of sampling one")
      ->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Evaluate a trained stage; prints a metric report");
  std::string checkpoint;
  std::uint64_t eval_seed = 0;
  eval->add_option("--stage", stage, "Stage to evaluate")->required()->check(stages);
  eval->add_option("--checkpoint", checkpoint, "Run directory or <stage>.ckpt file")->required();
  eval->add_option("--seed", eval_seed, "Sampling seed");

  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  std::string addr;
  serve->add_option("--run-dir", run_dir, "Run directory with trained checkpoints")->required();
  serve->add_option("--addr", addr, "host:port (default: $HIERGEN_ADDR or 127.0.0.1:8080)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  hg_set_log_level(log_level);
  const char* config = c_str_or_null(config_path);

  if (*make) {
    Owned digest;
    if (auto st = hg_make_shapeworld(config, data_out.c_str(), count, data_seed, &digest.s)) return fail(st);
    std::cout << digest.str() << "\n";
    return 0;
  }
  if (*train) {
    Owned history;
    const std::uint64_t* s = train_seed ? &*train_seed : nullptr;
    if (auto st = hg_train(config, stage.c_str(), run_dir.c_str(), resume, allow_mismatch, s, &history.s)) {
      return fail(st);
    }
    std::cout << history.str() << "\n";
    return 0;
  }
  if (*eval) {
    Owned report;
    if (auto st = hg_eval(config, stage.c_str(), run_dir_of(checkpoint).c_str(), eval_seed, &report.s)) {
      return fail(st);
    }
    std::cout << report.str() << "\n";
    return 0;
  }
  if (*serve) {
    if (auto st = hg_serve(run_dir.c_str(), config, c_str_or_null(addr))) return fail(st);
    return 0;
  }

  hg_pipeline* pipeline = nullptr;
  if (auto st = hg_pipeline_load(run_dir.c_str(), config, &pipeline)) return fail(st);
  std::unique_ptr<hg_pipeline, decltype(&hg_pipeline_free)> guard(pipeline, hg_pipeline_free);

  if (*sample) {
    Owned layout;
    if (auto st = hg_sample_layout(pipeline, text.c_str(), seed, &layout.s)) return fail(st);
    std::cout << layout.str() << "\n";
    return 0;
  }

  std::string layout_in;
  if (!layout_path.empty()) {
    auto content = read_text(layout_path);
    if (!content) {
      std::cerr << "error: cannot read " << layout_path << "\n";
      return kExitFailure;
    }
    layout_in = *content;
  }
  Owned layout;
  Owned masks;
  std::uint8_t* png = nullptr;
  std::size_t png_size = 0;
  if (auto st = hg_generate(pipeline, text.c_str(), seed, c_str_or_null(layout_in), &layout.s, &masks.s, &png,
                            &png_size)) {
    return fail(st);
  }
  std::unique_ptr<std::uint8_t, decltype(&hg_free_bytes)> png_guard(png, hg_free_bytes);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const fs::path out(out_dir);
  bool ok = write_text(out / "layout.json", layout.str()) && write_text(out / "masks.json", masks.str());
  {
    std::ofstream image(out / "image.png", std::ios::binary | std::ios::trunc);
    image.write(reinterpret_cast<const char*>(png), static_cast<std::streamsize>(png_size));
    ok = ok && static_cast<bool>(image);
  }
  if (!ok) {
    std::cerr << "error: cannot write outputs to " << out_dir << "\n";
    return kExitFailure;
  }
  std::cout << (out / "image.png").string() << "\n";
  return 0;
}
