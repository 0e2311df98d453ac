#pragma once

#include <chrono>
#include <string>

#include "xaisvc/api.hpp"
#include "xaisvc/demo.hpp"

namespace testing_support {

using namespace xaisvc;

inline std::pair<int, json> send(const api::ApiRouter& router, const demo::ApiCall& call) {
  auto out = router.handle(call.method, call.path, {}, call.body.dump());
  return {out.status, out.body};
}

inline void provision_demo(api::App& app, std::uint64_t seed) {
  demo::provision([&](const demo::ApiCall& c) { return send(*app.router, c); }, seed);
}

/// Registers the reference services under short ids and creates a 6-sample
/// synthetic group "six".
inline void basic_setup(api::App& app) {
  auto& c = *app.coordinator;
  using coordination::ServiceKind;
  c.register_service({"db", ServiceKind::database, "local://dataset", "db", ""});
  c.register_service({"eval", ServiceKind::evaluation, "local://evaluation", "eval", ""});
  c.register_service({"proto", ServiceKind::ai_model, "local://model/prototype?labels=2", "proto", ""});
  c.register_service({"linear", ServiceKind::ai_model, "local://model/linear?height=8&width=8&seed=1", "linear", ""});
  c.register_service({"occ", ServiceKind::xai_method, "local://xai/occlusion", "occ", ""});
  app.reference.datasets->put(
      reference::generate_synthetic_dataset({2, 3, 8, 8, 1, 7, 0.15}, "six", "six"));
}

inline coordination::TaskSheet xai_sheet(const std::string& id, const std::string& model = "proto",
                                         const std::string& dataset = "six", xaisvc::json params = xaisvc::json::object()) {
  coordination::TaskSheet s;
  s.sheet_id = id;
  s.kind = coordination::SheetKind::xai;
  s.service_refs = {{"database", "db"}, {"ai_model", model}, {"xai_method", "occ"}};
  s.dataset_ref = dataset;
  s.parameters = std::move(params);
  return s;
}

inline coordination::TaskSheet eval_sheet(const std::string& id, const std::string& dataset = "six") {
  coordination::TaskSheet s;
  s.sheet_id = id;
  s.kind = coordination::SheetKind::evaluation;
  s.service_refs = {{"database", "db"}, {"evaluation", "eval"}};
  s.dataset_ref = dataset;
  return s;
}

}  // namespace testing_support
