#pragma once

// Reference AI-model services. Each model is fully described by its
// endpoint query string, so the endpoint recorded in provenance is enough to
// rebuild the model exactly.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "xaisvc/image.hpp"
#include "xaisvc/reference/dataset.hpp"
#include "xaisvc/saliency.hpp"
#include "xaisvc/transport.hpp"

namespace xaisvc::reference {

struct Prediction {
  std::string label;
  double confidence = 0.0;
  std::map<std::string, double> distribution;
};

inline json to_json(const Prediction& p) {
  return {{"label", p.label}, {"confidence", p.confidence}, {"distribution", p.distribution}};
}

inline Prediction prediction_from_json(const json& j) {
  Prediction p;
  p.label = j.at("label").get<std::string>();
  p.confidence = j.at("confidence").get<double>();
  if (j.contains("distribution") && j["distribution"].is_object()) {
    p.distribution = j["distribution"].get<std::map<std::string, double>>();
  }
  return p;
}

/// Probability the prediction assigns to `label`; falls back to the reported
/// confidence when the service returned no distribution.
inline double probability_of(const Prediction& p, const std::string& label) {
  if (p.distribution.empty()) return p.confidence;
  auto it = p.distribution.find(label);
  return it == p.distribution.end() ? 0.0 : it->second;
}

struct PrototypeModel {
  std::vector<std::string> labels;
  std::vector<Image> prototypes;
  double temperature = 0.05;
};

inline PrototypeModel make_prototype_model(std::size_t labels, std::size_t height, std::size_t width,
                                           std::size_t channels, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
  PrototypeModel m;
  m.temperature = temperature;
  for (std::size_t k = 0; k < labels; ++k) {
    m.labels.push_back(label_name(k));
    m.prototypes.push_back(label_pattern(k, labels, height, width, channels));
  }
  return m;
}

/// Similarity is the negative mean squared distance to each prototype; the
/// distribution is its softmax at the model temperature.
inline Prediction prototype_predict(const PrototypeModel& model, const Image& image) {
  if (model.prototypes.empty()) throw Error(ErrorCode::InvalidArgument, "prototype model has no prototypes");
  std::vector<double> logits;
  logits.reserve(model.prototypes.size());
  for (const auto& proto : model.prototypes) {
    if (proto.height() != image.height() || proto.width() != image.width() || proto.channels() != image.channels()) {
      throw Error(ErrorCode::DimensionMismatch, "image does not match prototype dimensions");
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < proto.pixels().size(); ++i) {
      const double d = image.pixels()[i] - proto.pixels()[i];
      sq += d * d;
    }
    logits.push_back(-(sq / static_cast<double>(proto.pixels().size())) / model.temperature);
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& l : logits) {
    l = std::exp(l - peak);
    z += l;
  }
  Prediction p;
  std::size_t best = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double prob = logits[k] / z;
    p.distribution[model.labels[k]] = prob;
    if (prob > logits[best] / z) best = k;
  }
  p.label = model.labels[best];
  p.confidence = logits[best] / z;
  return p;
}

inline LinearModel make_seeded_linear_model(std::size_t height, std::size_t width, std::uint64_t seed, double scale,
                                            double offset) {
  LinearModel m{height, width, std::vector<double>(height * width), scale, offset};
  SeededRng rng(seed);
  for (auto& w : m.weights) w = rng.uniform();
  return m;
}

inline Prediction linear_prediction(const LinearModel& model, const Image& image) {
  const double c = linear_predict(model, image);
  return {"positive", c, {{"positive", c}, {"negative", 1.0 - c}}};
}

namespace detail {

template <typename T>
T query_value(const std::map<std::string, std::string>& q, const std::string& key, T fallback) {
  auto it = q.find(key);
  if (it == q.end()) return fallback;
  try {
    if constexpr (std::is_same_v<T, double>) return std::stod(it->second);
    else if constexpr (std::is_same_v<T, std::string>) return it->second;
    else return static_cast<T>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad value for endpoint parameter '" + key + "'", {{key, it->second}});
  }
}

}  // namespace detail

/// Model service. Routes (all POST {image} -> {label, confidence, distribution}):
///   /prototype/predict?labels=&height=&width=&channels=&temperature=
///   /linear/predict?height=&width=&seed=&scale=&offset=
///   /constant/predict?value=&label=
///   /failing/predict            always replies 500 (fault injection)
inline ServiceHandler model_service() {
  return [](const ServiceRequest& req) -> ServiceResponse {
    const auto parts = detail::split_path(req.path);
    if (parts.size() != 2 || parts[1] != "predict" || req.method != "POST") return detail::not_found(req);
    const auto& q = req.query;
    const auto& kind = parts[0];
    if (kind == "failing") {
      return {500, Error(ErrorCode::ModelFailure, "injected model failure").to_json()};
    }
    const Image image = image_from_json(req.body.at("image"));
    if (kind == "prototype") {
      auto model = make_prototype_model(detail::query_value<std::size_t>(q, "labels", 3),
                                        detail::query_value<std::size_t>(q, "height", image.height()),
                                        detail::query_value<std::size_t>(q, "width", image.width()),
                                        detail::query_value<std::size_t>(q, "channels", image.channels()),
                                        detail::query_value<double>(q, "temperature", 0.05));
      return {200, to_json(prototype_predict(model, image))};
    }
    if (kind == "linear") {
      auto model = make_seeded_linear_model(detail::query_value<std::size_t>(q, "height", image.height()),
                                            detail::query_value<std::size_t>(q, "width", image.width()),
                                            detail::query_value<std::uint64_t>(q, "seed", 0),
                                            detail::query_value<double>(q, "scale", 0.01),
                                            detail::query_value<double>(q, "offset", 0.5));
      return {200, to_json(linear_prediction(model, image))};
    }
    if (kind == "constant") {
      const double v = detail::query_value<double>(q, "value", 0.7);
      const auto label = detail::query_value<std::string>(q, "label", "class-0");
      return {200, to_json(Prediction{label, v, {{label, v}}})};
    }
    return detail::not_found(req);
  };
}

}  // namespace xaisvc::reference
