#include "hiergen/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hiergen/error.hpp"
#include "hiergen/log.hpp"
#include "hiergen/rng.hpp"

namespace hiergen {

void MetricReport::set(const std::string& name, double value, std::size_t count, std::optional<double> std_error) {
  if (!std::isfinite(value)) throw Error(ErrorCode::kNonFinite, "metric '" + name + "' is not finite");
  if (count == 0) throw Error(ErrorCode::kInvalidArgument, "metric '" + name + "' has no samples");
  metrics[name] = Metric{value, count, std_error};
}

const Metric& MetricReport::at(const std::string& name) const {
  auto it = metrics.find(name);
  if (it == metrics.end()) throw Error(ErrorCode::kInvalidArgument, "no metric named '" + name + "'");
  return it->second;
}

const std::vector<std::string>& unavailable_caption_metrics() {
  static const std::vector<std::string> names = {"bleu_1", "bleu_2", "bleu_3", "bleu_4", "meteor", "cider"};
  return names;
}

Json report_json(const MetricReport& report) {
  Json j;
  j["stage"] = report.stage;
  Json metrics = Json::object();
  for (const auto& [name, m] : report.metrics) {
    Json entry;
    entry["value"] = m.value;
    entry["count"] = m.count;
    if (m.std_error) entry["std_error"] = *m.std_error;
    metrics[name] = std::move(entry);
  }
  j["metrics"] = std::move(metrics);
  j["unavailable"] = unavailable_caption_metrics();
  return j;
}

ScoreSummary classifier_score(const std::vector<std::vector<double>>& probabilities, int splits,
                              std::uint64_t split_seed) {
  if (probabilities.empty()) throw Error(ErrorCode::kInvalidArgument, "classifier_score needs at least one image");
  const std::size_t classes = probabilities.front().size();
  for (const auto& p : probabilities) {
    if (p.size() != classes || classes == 0) throw Error(ErrorCode::kShapeMismatch, "probability rows differ in size");
  }
  if (splits < 1) throw Error(ErrorCode::kInvalidArgument, "splits must be positive");
  if (probabilities.size() < static_cast<std::size_t>(splits)) {
    log::warn("classifier_score: ", probabilities.size(), " images for ", splits, " splits; using a single split");
    splits = 1;
  }

  std::vector<std::size_t> order(probabilities.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return probabilities[a] < probabilities[b]; });
  Rng rng(split_seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }

  std::vector<double> scores;
  const std::size_t n = order.size();
  for (int s = 0; s < splits; ++s) {
    const std::size_t begin = n * static_cast<std::size_t>(s) / static_cast<std::size_t>(splits);
    const std::size_t end = n * static_cast<std::size_t>(s + 1) / static_cast<std::size_t>(splits);
    std::vector<double> marginal(classes, 0.0);
    for (std::size_t r = begin; r < end; ++r) {
      for (std::size_t c = 0; c < classes; ++c) marginal[c] += probabilities[order[r]][c];
    }
    for (auto& m : marginal) m /= static_cast<double>(end - begin);
    double kl_sum = 0.0;
    for (std::size_t r = begin; r < end; ++r) {
      for (std::size_t c = 0; c < classes; ++c) {
        const double p = probabilities[order[r]][c];
        if (p > 0.0) kl_sum += p * (std::log(p) - std::log(marginal[c]));
      }
    }
    scores.push_back(std::exp(kl_sum / static_cast<double>(end - begin)));
  }
  ScoreSummary out;
  out.splits = splits;
  out.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / splits;
  double var = 0.0;
  for (double s : scores) var += (s - out.mean) * (s - out.mean);
  out.std = std::sqrt(var / splits);
  return out;
}

namespace {

std::vector<double> normalized(const std::map<int, double>& hist, const std::vector<int>& keys, double total) {
  std::vector<double> out;
  for (int k : keys) {
    auto it = hist.find(k);
    out.push_back(it == hist.end() ? 0.0 : it->second / total);
  }
  return out;
}

double tv_distance(const std::map<int, double>& a, double total_a, const std::map<int, double>& b, double total_b) {
  std::vector<int> keys;
  for (const auto& [k, v] : a) keys.push_back(k);
  for (const auto& [k, v] : b) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  const auto pa = normalized(a, keys, total_a);
  const auto pb = normalized(b, keys, total_b);
  double tv = 0.0;
  for (std::size_t k = 0; k < keys.size(); ++k) tv += std::abs(pa[k] - pb[k]);
  return 0.5 * tv;
}

}  // namespace

TotalVariation count_category_tv(const std::vector<LayoutSequence>& sampled,
                                 const std::vector<LayoutSequence>& reference) {
  if (sampled.empty() || reference.empty()) throw Error(ErrorCode::kInvalidArgument, "layout sets must be nonempty");
  auto histograms = [](const std::vector<LayoutSequence>& set) {
    std::map<int, double> counts, cats;
    double boxes = 0.0;
    for (const auto& l : set) {
      counts[static_cast<int>(l.boxes.size())] += 1.0;
      for (const auto& b : l.boxes) {
        cats[b.label] += 1.0;
        boxes += 1.0;
      }
    }
    return std::tuple{counts, cats, boxes};
  };
  const auto [ca, ka, na] = histograms(sampled);
  const auto [cb, kb, nb] = histograms(reference);
  TotalVariation tv;
  tv.count = tv_distance(ca, static_cast<double>(sampled.size()), cb, static_cast<double>(reference.size()));
  if (na == 0.0 && nb == 0.0) {
    tv.category = 0.0;
  } else if (na == 0.0 || nb == 0.0) {
    tv.category = 1.0;
  } else {
    tv.category = tv_distance(ka, na, kb, nb);
  }
  return tv;
}

double mask_iou(const InstanceMask& pred, const InstanceMask& gt, double threshold) {
  if (!pred.same_shape(gt)) throw Error(ErrorCode::kShapeMismatch, "mask shapes differ");
  std::size_t inter = 0, uni = 0;
  const auto p = pred.values();
  const auto g = gt.values();
  for (std::size_t n = 0; n < p.size(); ++n) {
    const bool a = p[n] >= threshold;
    const bool b = g[n] >= threshold;
    inter += (a && b);
    uni += (a || b);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace hiergen
