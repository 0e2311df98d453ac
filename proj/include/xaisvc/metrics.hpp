#pragma once

// Prediction-change values, explanation stability and the distribution /
// classification summaries built on top of them. Everything here is a pure
// function over its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xaisvc/error.hpp"

namespace xaisvc::metrics {

/// Model confidence for the predicted label, always in [0, 1].
class Confidence {
 public:
  constexpr Confidence() = default;
  explicit Confidence(double value) : value_(value) {
    if (!(value >= 0.0 && value <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "confidence must lie in [0, 1]", {{"value", value}});
    }
  }
  constexpr double value() const noexcept { return value_; }
  friend constexpr bool operator==(Confidence, Confidence) = default;

 private:
  double value_ = 0.0;
};

/// Relative prediction change |masked - original| / original.
class PredictionChange {
 public:
  constexpr PredictionChange() = default;
  explicit PredictionChange(double value) : value_(value) {
    if (!(value >= 0.0) || !std::isfinite(value)) {
      throw Error(ErrorCode::InvalidArgument, "prediction change must be finite and nonnegative",
                  {{"value", value}});
    }
  }
  constexpr double value() const noexcept { return value_; }
  friend constexpr bool operator==(PredictionChange, PredictionChange) = default;

 private:
  double value_ = 0.0;
};

struct Explanation {
  std::string sample_id;
  std::string method_id;
  Confidence original;
  Confidence masked;
  PredictionChange delta;
};

struct ExplanationSet {
  std::string method_id;
  std::vector<Explanation> explanations;

  std::size_t m() const noexcept { return explanations.size(); }
};

struct StabilityResult {
  double mean_pairwise_distance = 0.0;
  std::size_t pair_count = 0;
  std::size_t m = 0;
};

struct HistogramSummary {
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;
  std::size_t total = 0;
};

struct ClassificationCounts {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
};

struct PerformanceReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when a zero denominator forced precision, recall or f1 to 0.
  bool degenerate = false;
};

inline PredictionChange prediction_change(Confidence original, Confidence masked) {
  if (original.value() == 0.0) {
    throw Error(ErrorCode::ZeroDenominator, "original confidence is zero; sample must be excluded or re-predicted");
  }
  return PredictionChange(std::abs(masked.value() - original.value()) / original.value());
}

inline std::vector<PredictionChange> batch_changes(std::span<const std::pair<Confidence, Confidence>> pairs) {
  std::vector<PredictionChange> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].first.value() == 0.0) {
      throw Error(ErrorCode::ZeroDenominator, "original confidence is zero at index " + std::to_string(i),
                  {{"index", i}});
    }
    out.push_back(prediction_change(pairs[i].first, pairs[i].second));
  }
  return out;
}

/// Symmetric distance between two explanations of the same method.
using PairDistance = std::function<double(const Explanation&, const Explanation&)>;

namespace distance {

inline double abs_delta(const Explanation& a, const Explanation& b) {
  return std::abs(a.delta.value() - b.delta.value());
}

inline double squared_delta(const Explanation& a, const Explanation& b) {
  double d = a.delta.value() - b.delta.value();
  return d * d;
}

}  // namespace distance

/// Looks up a named distance selector ("abs_delta", "squared_delta").
inline PairDistance distance_by_name(const std::string& name) {
  if (name == "abs_delta") return distance::abs_delta;
  if (name == "squared_delta") return distance::squared_delta;
  throw Error(ErrorCode::InvalidArgument, "unknown distance selector '" + name + "'", {{"distance", name}});
}

/// Mean of `distance` over all C(m, 2) unordered pairs.
inline StabilityResult stability(const ExplanationSet& set, const PairDistance& dist = distance::abs_delta) {
  const std::size_t m = set.m();
  if (m < 2) {
    throw Error(ErrorCode::InsufficientSamples, "stability needs at least two explanations", {{"m", m}});
  }
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      sum += dist(set.explanations[i], set.explanations[j]);
    }
  }
  StabilityResult r;
  r.m = m;
  r.pair_count = m * (m - 1) / 2;
  r.mean_pairwise_distance = sum / static_cast<double>(r.pair_count);
  return r;
}

/// Equal-width bins over [lo, hi]. Bins are half-open except the last, which
/// is closed and also absorbs values above hi; values below lo land in bin 0.
inline HistogramSummary histogram(std::span<const PredictionChange> deltas, std::size_t bins = 50, double lo = 0.0,
                                  double hi = 1.0) {
  if (!(hi > lo)) {
    throw Error(ErrorCode::EmptyRange, "histogram range must satisfy hi > lo", {{"lo", lo}, {"hi", hi}});
  }
  if (bins == 0) throw Error(ErrorCode::InvalidArgument, "histogram needs at least one bin");

  HistogramSummary h;
  h.bin_edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) h.bin_edges[i] = lo + width * static_cast<double>(i);
  h.bin_edges.back() = hi;
  h.counts.assign(bins, 0);

  for (const auto& d : deltas) {
    const double v = d.value();
    std::size_t idx;
    if (v <= lo) {
      idx = 0;
    } else if (v >= hi) {
      idx = bins - 1;
    } else {
      idx = static_cast<std::size_t>((v - lo) / width);
      // Guard against rounding putting a value on the wrong side of an edge.
      while (idx + 1 < bins && v >= h.bin_edges[idx + 1]) ++idx;
      while (idx > 0 && v < h.bin_edges[idx]) --idx;
      idx = std::min(idx, bins - 1);
    }
    ++h.counts[idx];
  }
  h.total = deltas.size();
  return h;
}

inline double fraction_exceeding(std::span<const PredictionChange> deltas, double threshold) {
  if (deltas.empty()) throw Error(ErrorCode::EmptyInput, "fraction_exceeding needs at least one value");
  auto n = std::count_if(deltas.begin(), deltas.end(), [&](PredictionChange d) { return d.value() > threshold; });
  return static_cast<double>(n) / static_cast<double>(deltas.size());
}

inline double mean_change(std::span<const PredictionChange> deltas) {
  if (deltas.empty()) throw Error(ErrorCode::EmptyInput, "mean_change needs at least one value");
  double sum = 0.0;
  for (const auto& d : deltas) sum += d.value();
  return sum / static_cast<double>(deltas.size());
}

/// Builds a report from already-known precision and recall.
inline PerformanceReport f1_from_precision_recall(double precision, double recall) {
  PerformanceReport r{precision, recall, 0.0, false};
  if (precision + recall > 0.0) {
    r.f1 = 2.0 * precision * recall / (precision + recall);
  } else {
    r.degenerate = true;
  }
  return r;
}

inline PerformanceReport f1_report(const ClassificationCounts& c) {
  const auto tp = static_cast<double>(c.true_positives);
  const std::size_t pred_pos = c.true_positives + c.false_positives;
  const std::size_t actual_pos = c.true_positives + c.false_negatives;
  bool degenerate = false;
  double precision = 0.0;
  double recall = 0.0;
  if (pred_pos > 0) precision = tp / static_cast<double>(pred_pos);
  else degenerate = true;
  if (actual_pos > 0) recall = tp / static_cast<double>(actual_pos);
  else degenerate = true;
  auto r = f1_from_precision_recall(precision, recall);
  r.degenerate = r.degenerate || degenerate;
  return r;
}

/// Per-label one-vs-rest counts from paired (true, predicted) labels.
inline std::map<std::string, ClassificationCounts> count_labels(
    std::span<const std::pair<std::string, std::string>> truth_and_prediction) {
  std::map<std::string, ClassificationCounts> out;
  for (const auto& [truth, predicted] : truth_and_prediction) {
    if (truth == predicted) {
      ++out[truth].true_positives;
    } else {
      ++out[truth].false_negatives;
      ++out[predicted].false_positives;
    }
  }
  return out;
}

/// Unweighted mean of per-label precision, recall and f1.
inline PerformanceReport macro_average(const std::map<std::string, ClassificationCounts>& per_label) {
  PerformanceReport r;
  if (per_label.empty()) {
    r.degenerate = true;
    return r;
  }
  for (const auto& [label, counts] : per_label) {
    auto p = f1_report(counts);
    r.precision += p.precision;
    r.recall += p.recall;
    r.f1 += p.f1;
    r.degenerate = r.degenerate || p.degenerate;
  }
  const auto n = static_cast<double>(per_label.size());
  r.precision /= n;
  r.recall /= n;
  r.f1 /= n;
  return r;
}

/// Id of the candidate with the lowest mean change; ties go to the
/// lexicographically smallest id.
inline std::string select_approximation_model(const std::map<std::string, std::vector<PredictionChange>>& candidates) {
  if (candidates.empty()) throw Error(ErrorCode::NoCandidates, "no approximation model candidates");
  std::string best;
  double best_mean = std::numeric_limits<double>::infinity();
  // std::map iterates in lexicographic order, so strict < keeps the first id on ties.
  for (const auto& [id, deltas] : candidates) {
    if (deltas.empty()) {
      throw Error(ErrorCode::EmptyInput, "candidate '" + id + "' has no prediction changes", {{"candidate", id}});
    }
    const double mean = mean_change(deltas);
    if (best.empty() || mean < best_mean) {
      best = id;
      best_mean = mean;
    }
  }
  return best;
}

struct Quartiles {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

/// Five-number summary with linear interpolation between order statistics.
inline Quartiles quartiles(std::span<const PredictionChange> deltas) {
  if (deltas.empty()) throw Error(ErrorCode::EmptyInput, "quartiles need at least one value");
  std::vector<double> v;
  v.reserve(deltas.size());
  for (const auto& d : deltas) v.push_back(d.value());
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {v.front(), at(0.25), at(0.5), at(0.75), v.back()};
}

}  // namespace xaisvc::metrics
