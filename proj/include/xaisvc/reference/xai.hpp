#pragma once

// Reference XAI-method service: occlusion saliency against a model endpoint,
// followed by a top-q mask.

#include <memory>
#include <string>

#include "xaisvc/reference/models.hpp"
#include "xaisvc/saliency.hpp"
#include "xaisvc/transport.hpp"

namespace xaisvc::reference {

struct ExplainParams {
  std::size_t window = 2;
  std::size_t stride = 1;
  double fill = 0.0;
  double q = 0.5;
};

inline ExplainParams explain_params_from_json(const json& j) {
  ExplainParams p;
  if (!j.is_object()) return p;
  p.window = j.value("window", p.window);
  p.stride = j.value("stride", p.stride);
  p.fill = j.value("fill", p.fill);
  p.q = j.value("q", p.q);
  return p;
}

inline json to_json(const ExplainParams& p) {
  return {{"window", p.window}, {"stride", p.stride}, {"fill", p.fill}, {"q", p.q}};
}

struct Explained {
  SaliencyMap saliency;
  Mask mask;
  std::string target_label;
};

/// Occlusion saliency for the label `predict` assigns to the unmodified
/// image, then threshold_mask at q.
template <typename Predict>
Explained explain_with(Predict&& predict, const Image& image, const ExplainParams& params, std::size_t parallelism = 1) {
  if (params.window == 0 || params.stride == 0) {
    throw Error(ErrorCode::InvalidArgument, "window and stride must be at least 1");
  }
  if (!(params.q > 0.0 && params.q <= 1.0)) throw Error(ErrorCode::InvalidFraction, "q must lie in (0, 1]", {{"q", params.q}});
  const Prediction base = predict(image);
  auto confidence = [&](const Image& img) { return probability_of(predict(img), base.label); };
  auto map = occlusion_saliency(confidence, image, OcclusionParams{params.window, params.stride, params.fill, parallelism});
  auto mask = threshold_mask(map, params.q);
  return {std::move(map), std::move(mask), base.label};
}

/// builtin_xai_explain: the model is reached through its endpoint, exactly
/// as an external XAI service would reach it.
inline Explained builtin_xai_explain(const Transport& transport, const std::string& model_endpoint, const Image& image,
                                     const ExplainParams& params, const std::string& sample_id = {},
                                     std::size_t parallelism = 1) {
  auto predict = [&](const Image& img) {
    return prediction_from_json(transport.call(model_endpoint, "POST", "/predict", {{"image", to_json(img)}}));
  };
  try {
    return explain_with(predict, image, params, parallelism);
  } catch (const Error& e) {
    if (sample_id.empty()) throw;
    auto details = e.details();
    details["sample_id"] = sample_id;
    throw Error(e.code(), "sample '" + sample_id + "': " + e.what(), details);
  }
}

/// XAI service route: POST /occlusion/explain
///   {image, model_endpoint, params{window, stride, fill, q}, sample_id?}
///   -> {saliency, mask, target_label, method{name, version}}
/// Endpoint query parameters: `parallelism` bounds concurrent model calls;
/// `window` and `stride`, when present, pin a method variant and override the
/// request params. The transport is held weakly: it usually routes back into
/// the same host.
inline ServiceHandler xai_service(std::weak_ptr<const Transport> weak_transport) {
  return [weak_transport](const ServiceRequest& req) -> ServiceResponse {
    auto transport = weak_transport.lock();
    if (!transport) throw Error(ErrorCode::ServiceUnavailable, "xai service transport is gone");
    const auto parts = detail::split_path(req.path);
    if (parts.size() != 2 || parts[0] != "occlusion" || parts[1] != "explain" || req.method != "POST") {
      return detail::not_found(req);
    }
    const Image image = image_from_json(req.body.at("image"));
    const auto model_endpoint = req.body.at("model_endpoint").get<std::string>();
    auto params = explain_params_from_json(req.body.value("params", json::object()));
    json method = {{"name", "occlusion"}, {"version", "1.0"}};
    if (req.query.count("window") || req.query.count("stride")) {
      params.window = detail::query_value<std::size_t>(req.query, "window", params.window);
      params.stride = detail::query_value<std::size_t>(req.query, "stride", params.stride);
      method["variant"] = {{"window", params.window}, {"stride", params.stride}};
    }
    const auto parallelism = detail::query_value<std::size_t>(req.query, "parallelism", 1);
    auto out = builtin_xai_explain(*transport, model_endpoint, image, params, req.body.value("sample_id", std::string()),
                                   parallelism);
    return {200,
            {{"saliency", to_json(out.saliency)},
             {"mask", to_json(out.mask)},
             {"target_label", out.target_label},
             {"method", method}}};
  };
}

}  // namespace xaisvc::reference
