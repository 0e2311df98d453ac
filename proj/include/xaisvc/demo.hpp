#pragma once

// Seeded demo scenario: one base pipeline and four variants, each differing
// from its predecessor in one configuration slot.
//
//   demo-s<seed>      base: model A, occlusion, dataset "base"
//   demo-s<seed>-c1   dataset swapped for "alt"
//   demo-s<seed>-c2   model A swapped for model B
//   demo-s<seed>-c3   c2 over the CutMix-augmented "base"
//   demo-s<seed>-c4   c3 with the coarse-window occlusion service
//
// Provisioning is a list of API calls so the CLI (over HTTP) and tests
// (through ApiRouter) replay exactly the same requests.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xaisvc/error.hpp"
#include "xaisvc/util.hpp"

namespace xaisvc::demo {

struct ApiCall {
  std::string method;
  std::string path;
  json body;
};

struct CaseSpec {
  std::string suffix;  // "" for the base pipeline, "-c1" ...
  std::string model;
  std::string xai;
  std::string dataset;  // "base", "alt", "base-cutmix"
};

inline const std::vector<CaseSpec>& cases() {
  static const std::vector<CaseSpec> all{
      {"", "demo-model-a", "demo-occlusion", "base"},
      {"-c1", "demo-model-a", "demo-occlusion", "alt"},
      {"-c2", "demo-model-b", "demo-occlusion", "base"},
      {"-c3", "demo-model-b", "demo-occlusion", "base-cutmix"},
      {"-c4", "demo-model-b", "demo-occlusion-w3", "base-cutmix"},
  };
  return all;
}

inline std::string prefix(std::uint64_t seed) { return "demo-s" + std::to_string(seed); }

inline std::string pipeline_id(std::uint64_t seed, std::size_t case_index = 0) {
  return prefix(seed) + cases().at(case_index).suffix;
}

inline std::vector<std::string> pipeline_ids(std::uint64_t seed) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < cases().size(); ++i) out.push_back(pipeline_id(seed, i));
  return out;
}

inline std::vector<ApiCall> provision_plan(std::uint64_t seed) {
  const auto pre = prefix(seed);
  std::vector<ApiCall> plan;
  auto service = [&](const std::string& id, const std::string& kind, const std::string& endpoint, const std::string& notes) {
    plan.push_back({"POST", "/services", {{"service_id", id}, {"kind", kind}, {"endpoint", endpoint}, {"name", id}, {"notes", notes}}});
  };
  service("demo-db", "database", "local://dataset", "reference dataset store");
  service("demo-eval", "evaluation", "local://evaluation", "reference evaluation");
  service("demo-model-a", "ai_model", "local://model/prototype?labels=3&temperature=0.05", "prototype model, sharp");
  service("demo-model-b", "ai_model", "local://model/prototype?labels=3&temperature=0.2", "prototype model, soft");
  service("demo-occlusion", "xai_method", "local://xai/occlusion", "occlusion, window from sheet");
  service("demo-occlusion-w3", "xai_method", "local://xai/occlusion?window=3&stride=1", "occlusion, fixed 3x3 window");

  const json synth = {{"labels", 3}, {"per_label", 4}, {"height", 8}, {"width", 8}, {"channels", 1}, {"noise", 0.15}};
  auto dataset = [&](const std::string& id, std::uint64_t s) {
    json body = synth;
    body["group_id"] = id;
    body["name"] = id;
    body["seed"] = s;
    plan.push_back({"POST", "/ref/dataset/groups/synthetic", body});
  };
  dataset(pre + "-base", seed);
  dataset(pre + "-alt", seed + 1);
  plan.push_back({"POST",
                  "/ref/dataset/groups/" + pre + "-base/augment",
                  {{"method", "cutmix"}, {"new_group_id", pre + "-base-cutmix"}, {"name", pre + "-base-cutmix"}, {"lambda", 0.75},
                   {"seed", seed}}});

  for (const auto& c : cases()) {
    const auto pid = pre + c.suffix;
    const auto dataset_ref = pre + "-" + c.dataset;
    plan.push_back({"POST",
                    "/task-sheets",
                    {{"sheet_id", pid + "-xai"},
                     {"kind", "xai"},
                     {"service_refs", {{"database", "demo-db"}, {"ai_model", c.model}, {"xai_method", c.xai}}},
                     {"dataset_ref", dataset_ref},
                     {"parameters", {{"q", 0.5}, {"fill", 0.0}, {"window", 2}, {"stride", 1}}}}});
    plan.push_back({"POST",
                    "/task-sheets",
                    {{"sheet_id", pid + "-eval"},
                     {"kind", "evaluation"},
                     {"service_refs", {{"database", "demo-db"}, {"evaluation", "demo-eval"}}},
                     {"dataset_ref", dataset_ref},
                     {"parameters", {{"bins", 50}, {"threshold", 0.5}, {"distance", "abs_delta"}}}}});
    plan.push_back({"POST", "/pipelines", {{"pipeline_id", pid}, {"name", pid}, {"sheet_ids", {pid + "-xai", pid + "-eval"}}}});
  }
  return plan;
}

/// Sends every provisioning call. DuplicateId replies are accepted so an
/// already provisioned scenario is left as is. `send` returns (status, body).
inline void provision(const std::function<std::pair<int, json>(const ApiCall&)>& send, std::uint64_t seed) {
  for (const auto& call : provision_plan(seed)) {
    const auto [status, body] = send(call);
    if (status >= 200 && status < 300) continue;
    const bool duplicate = body.is_object() && body.contains("error") && body["error"].value("code", "") == "DuplicateId";
    if (duplicate) continue;
    auto code = ErrorCode::DownstreamError;
    if (body.is_object() && body.contains("error")) {
      if (auto c = error_code_from_string(body["error"].value("code", ""))) code = *c;
    }
    throw Error(code, "demo provisioning failed at " + call.method + " " + call.path,
                {{"status", status}, {"reply", body}});
  }
}

/// Plot-ready report for one evaluation payload: the evaluation report plus
/// histogram and violin data. Contains no tickets or timestamps, so two runs
/// of the same configuration give identical files.
inline json build_report(const std::string& pipeline_id, const std::string& results_hash, const json& evaluation_payload) {
  const auto& report = evaluation_payload.at("report");
  return {{"pipeline_id", pipeline_id},
          {"results_hash", results_hash},
          {"input_ref", evaluation_payload.value("input_ref", std::string())},
          {"method_id", evaluation_payload.value("method_id", std::string())},
          {"report", report},
          {"plot",
           {{"histogram",
             {{"bins", report.at("histogram").at("bins")},
              {"edges", report.at("histogram").at("edges")},
              {"counts", report.at("histogram").at("counts")}}},
            {"violin", report.at("violin")}}}};
}

}  // namespace xaisvc::demo
