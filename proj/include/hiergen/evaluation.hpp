#pragma once

// Model-independent metrics. Model-driven evaluations live in model_eval.hpp.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hiergen/json_io.hpp"
#include "hiergen/layout.hpp"

namespace hiergen {

struct Metric {
  double value = 0.0;
  std::size_t count = 0;
  std::optional<double> std_error;
};

struct MetricReport {
  std::string stage;
  std::map<std::string, Metric> metrics;

  void set(const std::string& name, double value, std::size_t count, std::optional<double> std_error = std::nullopt);
  const Metric& at(const std::string& name) const;
};

// Caption-generation metrics require an external captioner and are never
// computed; their names are listed as unavailable in every report.
const std::vector<std::string>& unavailable_caption_metrics();

Json report_json(const MetricReport& report);

struct ScoreSummary {
  double mean = 0.0;
  double std = 0.0;
  int splits = 0;
};

// exp(E_x KL(p(y|x) || p(y))) per split, mean and std over splits. Rows are
// put in a canonical order and then shuffled by `split_seed`, so the result
// does not depend on the input order.
ScoreSummary classifier_score(const std::vector<std::vector<double>>& probabilities, int splits = 10,
                              std::uint64_t split_seed = 0);

struct TotalVariation {
  double count = 0.0;
  double category = 0.0;
};

TotalVariation count_category_tv(const std::vector<LayoutSequence>& sampled,
                                 const std::vector<LayoutSequence>& reference);

double mask_iou(const InstanceMask& pred, const InstanceMask& gt, double threshold = kDefaultMaskThreshold);

}  // namespace hiergen
