#pragma once

// Reference evaluation service: turns a set of explanation records into the
// report (stability, histogram, fraction exceeding, mean, quartiles,
// classification scores).

#include <string>
#include <vector>

#include "xaisvc/metrics.hpp"
#include "xaisvc/reference/dataset.hpp"
#include "xaisvc/transport.hpp"

namespace xaisvc::reference {

/// One per-sample explanation as it travels between services.
struct ExplanationRecord {
  metrics::Explanation explanation;
  std::string label;            // ground truth (dominant label for augmented samples)
  std::string predicted_label;  // model label on the original image
};

inline json to_json(const ExplanationRecord& r) {
  const auto& e = r.explanation;
  return {{"sample_id", e.sample_id},
          {"method_id", e.method_id},
          {"original_confidence", e.original.value()},
          {"masked_confidence", e.masked.value()},
          {"delta", e.delta.value()},
          {"label", r.label},
          {"predicted_label", r.predicted_label}};
}

inline ExplanationRecord explanation_from_json(const json& j) {
  ExplanationRecord r;
  r.explanation.sample_id = j.at("sample_id").get<std::string>();
  r.explanation.method_id = j.value("method_id", std::string());
  r.explanation.original = metrics::Confidence(j.at("original_confidence").get<double>());
  r.explanation.masked = metrics::Confidence(j.at("masked_confidence").get<double>());
  r.explanation.delta = metrics::PredictionChange(j.at("delta").get<double>());
  r.label = j.value("label", std::string());
  r.predicted_label = j.value("predicted_label", std::string());
  return r;
}

struct EvaluationOptions {
  std::size_t bins = 50;
  double range_lo = 0.0;
  double range_hi = 1.0;
  double threshold = 0.5;
  std::string distance = "abs_delta";
};

inline EvaluationOptions evaluation_options_from_json(const json& j) {
  EvaluationOptions o;
  if (!j.is_object()) return o;
  o.bins = j.value("bins", o.bins);
  o.range_lo = j.value("range_lo", o.range_lo);
  o.range_hi = j.value("range_hi", o.range_hi);
  o.threshold = j.value("threshold", o.threshold);
  o.distance = j.value("distance", o.distance);
  return o;
}

inline json to_json(const EvaluationOptions& o) {
  return {{"bins", o.bins}, {"range_lo", o.range_lo}, {"range_hi", o.range_hi}, {"threshold", o.threshold},
          {"distance", o.distance}};
}

/// builtin_evaluate. Stability needs m >= 2; below that the stability
/// section is marked unavailable and everything else is still reported.
inline json builtin_evaluate(const std::vector<ExplanationRecord>& records, const EvaluationOptions& options) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "evaluation needs at least one explanation");
  metrics::ExplanationSet set;
  set.method_id = records.front().explanation.method_id;
  std::vector<metrics::PredictionChange> deltas;
  std::vector<std::pair<std::string, std::string>> labels;
  for (const auto& r : records) {
    set.explanations.push_back(r.explanation);
    deltas.push_back(r.explanation.delta);
    if (!r.label.empty() && !r.predicted_label.empty()) labels.emplace_back(r.label, r.predicted_label);
  }
  const auto distance = metrics::distance_by_name(options.distance);

  json report;
  report["m"] = set.m();
  report["method_id"] = set.method_id;
  report["options"] = to_json(options);
  report["mean_change"] = metrics::mean_change(deltas);
  try {
    const auto s = metrics::stability(set, distance);
    report["stability"] = {{"available", true}, {"value", s.mean_pairwise_distance}, {"pair_count", s.pair_count},
                           {"distance", options.distance}};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientSamples) throw;
    report["stability"] = {{"available", false}, {"reason", "InsufficientSamples"}, {"distance", options.distance}};
  }
  const auto h = metrics::histogram(deltas, options.bins, options.range_lo, options.range_hi);
  report["histogram"] = {{"bins", options.bins}, {"edges", h.bin_edges}, {"counts", h.counts}, {"total", h.total}};
  report["fraction_exceeding"] = {{"threshold", options.threshold},
                                  {"value", metrics::fraction_exceeding(deltas, options.threshold)}};
  const auto q = metrics::quartiles(deltas);
  report["violin"] = {{"min", q.min}, {"q1", q.q1}, {"median", q.median}, {"q3", q.q3}, {"max", q.max}};

  json classification = json::object();
  if (!labels.empty()) {
    const auto per_label = metrics::count_labels(labels);
    json per = json::object();
    for (const auto& [label, c] : per_label) {
      const auto p = metrics::f1_report(c);
      per[label] = {{"tp", c.true_positives}, {"fp", c.false_positives}, {"fn", c.false_negatives},
                    {"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}, {"degenerate", p.degenerate}};
    }
    const auto macro = metrics::macro_average(per_label);
    classification = {{"per_label", per},
                      {"macro", {{"precision", macro.precision}, {"recall", macro.recall}, {"f1", macro.f1},
                                 {"degenerate", macro.degenerate}}}};
  }
  report["classification"] = classification;
  return report;
}

/// Evaluation service route: POST /evaluate {explanations: [...], options}
inline ServiceHandler evaluation_service() {
  return [](const ServiceRequest& req) -> ServiceResponse {
    const auto parts = detail::split_path(req.path);
    if (parts.size() != 1 || parts[0] != "evaluate" || req.method != "POST") return detail::not_found(req);
    std::vector<ExplanationRecord> records;
    for (const auto& e : req.body.at("explanations")) records.push_back(explanation_from_json(e));
    return {200, builtin_evaluate(records, evaluation_options_from_json(req.body.value("options", json::object())))};
  };
}

}  // namespace xaisvc::reference
