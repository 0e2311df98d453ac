#pragma once

// Open HTTP API. ApiRouter maps (method, path, query, body) to a response and
// has no HTTP dependency; ApiServer binds it to cpp-httplib.
//
//   GET    /health
//   POST   /services                      GET /services[?kind=]
//   GET    /services/{id}                 DELETE /services/{id}
//   POST   /task-sheets                   GET /task-sheets, /task-sheets/{id}
//   POST   /executions {sheet_id, input_ref?}
//   GET    /executions/{ticket}[?wait=seconds]
//   POST   /pipelines                     GET /pipelines, /pipelines/{id}
//   POST   /pipelines/{id}/executions     GET /pipelines/{id}/executions
//   GET    /pipelines/{id}/executions/{ticket}[?wait=seconds]
//   GET    /provenance/pipelines/{id}[?format=json|jsonl|dot]
//   POST   /provenance/pipelines/{id}/rerun {ticket}
//   GET    /provenance/diff?a=&b=[&format=json|dot]
//   GET    /provenance/export             whole store as JSON lines
//   GET    /results/{hash}
//   *      /ref/{service}/...             reference services

#include <memory>
#include <string>
#include <thread>

#include "xaisvc/config.hpp"
#include "xaisvc/coordination.hpp"
#include "xaisvc/provenance.hpp"
#include "xaisvc/reference/host.hpp"
#include "xaisvc/transport.hpp"

namespace xaisvc::api {

using coordination::Coordinator;
namespace prov = xaisvc::provenance;

struct ApiResponse {
  int status = 200;
  json body = json::object();
  // Set for non-JSON representations (DOT, JSON lines).
  std::optional<std::string> text;
  std::string content_type = "application/json";

  ApiResponse() = default;
  ApiResponse(int s, json b) : status(s), body(std::move(b)) {}
  ApiResponse(int s, json b, std::string t, std::string type)
      : status(s), body(std::move(b)), text(std::move(t)), content_type(std::move(type)) {}

  std::string payload() const { return text ? *text : canonical_dump(body); }
};

inline json to_json(const prov::ProvGraph& g) {
  json nodes = json::array();
  json edges = json::array();
  for (const auto& n : g.nodes()) nodes.push_back({{"id", n.id}, {"kind", n.kind}, {"attributes", n.attributes}});
  for (const auto& e : g.edges()) {
    edges.push_back({{"from", e.from}, {"to", e.to}, {"relation", e.relation}, {"role", e.role}});
  }
  return {{"root", g.root}, {"nodes", nodes}, {"edges", edges}};
}

inline prov::ProvGraph graph_from_json(const json& j) {
  std::string lines;
  for (const auto& n : j.at("nodes")) lines += canonical_dump({{"type", "node"}, {"id", n.at("id")}, {"kind", n.at("kind")}, {"attributes", n.at("attributes")}}) + "\n";
  for (const auto& e : j.at("edges")) {
    lines += canonical_dump({{"type", "edge"}, {"from", e.at("from")}, {"to", e.at("to")}, {"relation", e.at("relation")},
                             {"role", e.value("role", std::string())}}) +
             "\n";
  }
  auto root = j.value("root", std::string());
  if (!root.empty()) lines += canonical_dump({{"type", "root"}, {"id", root}}) + "\n";
  return prov::import_jsonl(lines);
}

class ApiRouter {
 public:
  ApiRouter(std::shared_ptr<Coordinator> coordinator, std::shared_ptr<const LocalServiceHost> local = nullptr)
      : coord_(std::move(coordinator)), local_(std::move(local)) {}

  ApiResponse handle(const std::string& method, const std::string& path,
                     const std::map<std::string, std::string>& query, const std::string& body_text) const {
    try {
      json body = json::object();
      if (!body_text.empty()) {
        try {
          body = json::parse(body_text);
        } catch (const json::exception& e) {
          throw Error(ErrorCode::InvalidArgument, std::string("malformed JSON body: ") + e.what());
        }
      }
      return route(method, path, query, body);
    } catch (const Error& e) {
      return {http_status(e.code()), e.to_json()};
    } catch (const json::exception& e) {
      return {400, Error(ErrorCode::InvalidArgument, std::string("bad request field: ") + e.what()).to_json()};
    } catch (const std::exception& e) {
      return {500, Error(ErrorCode::DownstreamError, std::string("internal error: ") + e.what()).to_json()};
    }
  }

 private:
  static std::vector<std::string> split(const std::string& path) { return reference::detail::split_path(path); }

  static std::optional<std::string> query_opt(const std::map<std::string, std::string>& q, const std::string& k) {
    auto it = q.find(k);
    if (it == q.end() || it->second.empty()) return std::nullopt;
    return it->second;
  }

  static std::chrono::milliseconds wait_time(const std::map<std::string, std::string>& q) {
    auto w = query_opt(q, "wait");
    if (!w) return std::chrono::milliseconds(0);
    try {
      return std::chrono::milliseconds(static_cast<long long>(std::stod(*w) * 1000.0));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "wait must be a number of seconds");
    }
  }

  static ApiResponse not_found(const std::string& method, const std::string& path) {
    return {404, Error(ErrorCode::InvalidArgument, "no route " + method + " " + path).to_json()};
  }

  ApiResponse route(const std::string& method, const std::string& path, const std::map<std::string, std::string>& query,
                    const json& body) const {
    const auto parts = split(path);
    if (parts.empty()) return not_found(method, path);
    const auto& head = parts[0];
    if (head == "health" && parts.size() == 1) return {200, {{"status", "ok"}}};
    if (head == "ref") return reference_call(method, parts, query, body);
    if (head == "services") return services(method, parts, query, body);
    if (head == "task-sheets") return sheets(method, parts, body);
    if (head == "executions") return executions(method, parts, query, body);
    if (head == "pipelines") return pipelines(method, parts, query, body);
    if (head == "provenance") return provenance(method, parts, query, body);
    if (head == "results" && parts.size() == 2 && method == "GET") return {200, coord_->results().get(parts[1])};
    return not_found(method, path);
  }

  ApiResponse reference_call(const std::string& method, const std::vector<std::string>& parts,
                             const std::map<std::string, std::string>& query, const json& body) const {
    if (parts.size() < 2 || !local_) return not_found(method, "/ref");
    auto handler = local_->find(parts[1]);
    if (!handler) {
      return {404, Error(ErrorCode::UnknownService, "no reference service '" + parts[1] + "'").to_json()};
    }
    std::string rest;
    for (std::size_t i = 2; i < parts.size(); ++i) rest += "/" + parts[i];
    auto out = invoke_handler(*handler, {method, rest.empty() ? "/" : rest, query, body});
    return {out.status, out.body};
  }

  ApiResponse services(const std::string& method, const std::vector<std::string>& parts,
                       const std::map<std::string, std::string>& query, const json& body) const {
    if (parts.size() == 1 && method == "POST") {
      const auto d = coordination::descriptor_from_json(body);
      coord_->register_service(d);
      return {201, coordination::to_json(coord_->get_service(d.service_id))};
    }
    if (parts.size() == 1 && method == "GET") {
      std::optional<coordination::ServiceKind> kind;
      if (auto k = query_opt(query, "kind")) kind = coordination::parse_service_kind(*k);
      json out = json::array();
      for (const auto& d : coord_->list_services(kind)) out.push_back(coordination::to_json(d));
      return {200, {{"services", out}}};
    }
    if (parts.size() == 2 && method == "GET") return {200, coordination::to_json(coord_->get_service(parts[1]))};
    if (parts.size() == 2 && method == "DELETE") {
      coord_->deregister_service(parts[1]);
      return {200, {{"deregistered", parts[1]}}};
    }
    return not_found(method, "/services");
  }

  ApiResponse sheets(const std::string& method, const std::vector<std::string>& parts, const json& body) const {
    if (parts.size() == 1 && method == "POST") {
      const auto id = coord_->create_task_sheet(coordination::sheet_from_json(body));
      return {201, coordination::to_json(coord_->get_sheet(id))};
    }
    if (parts.size() == 1 && method == "GET") {
      json out = json::array();
      for (const auto& s : coord_->list_sheets()) out.push_back(coordination::to_json(s));
      return {200, {{"task_sheets", out}}};
    }
    if (parts.size() == 2 && method == "GET") return {200, coordination::to_json(coord_->get_sheet(parts[1]))};
    return not_found(method, "/task-sheets");
  }

  ApiResponse executions(const std::string& method, const std::vector<std::string>& parts,
                         const std::map<std::string, std::string>& query, const json& body) const {
    if (parts.size() == 1 && method == "POST") {
      std::optional<std::string> input;
      if (body.contains("input_ref") && !body["input_ref"].is_null()) input = body["input_ref"].get<std::string>();
      const auto ticket = coord_->submit_task(body.at("sheet_id").get<std::string>(), input);
      return {202, coordination::to_json(coord_->get_status(ticket))};
    }
    if (parts.size() == 2 && method == "GET") {
      const auto wait = wait_time(query);
      const auto snap = wait.count() > 0 ? coord_->wait_task(parts[1], wait) : coord_->get_status(parts[1]);
      return {200, coordination::to_json(snap)};
    }
    return not_found(method, "/executions");
  }

  ApiResponse pipelines(const std::string& method, const std::vector<std::string>& parts,
                        const std::map<std::string, std::string>& query, const json& body) const {
    if (parts.size() == 1 && method == "POST") {
      const auto id = coord_->create_pipeline(coordination::pipeline_from_json(body));
      return {201, coordination::to_json(coord_->get_pipeline(id))};
    }
    if (parts.size() == 1 && method == "GET") {
      json out = json::array();
      for (const auto& p : coord_->list_pipelines()) out.push_back(coordination::to_json(p));
      return {200, {{"pipelines", out}}};
    }
    if (parts.size() == 2 && method == "GET") return {200, coordination::to_json(coord_->get_pipeline(parts[1]))};
    if (parts.size() == 3 && parts[2] == "executions" && method == "POST") {
      const auto ticket = coord_->submit_pipeline(parts[1]);
      return {202, coordination::to_json(coord_->get_pipeline_execution(ticket))};
    }
    if (parts.size() == 3 && parts[2] == "executions" && method == "GET") {
      coord_->get_pipeline(parts[1]);
      json out = json::array();
      for (const auto& e : coord_->list_pipeline_executions(parts[1])) out.push_back(coordination::to_json(e));
      return {200, {{"executions", out}}};
    }
    if (parts.size() == 4 && parts[2] == "executions" && method == "GET") {
      const auto wait = wait_time(query);
      auto snap = coord_->get_pipeline_execution(parts[1], parts[3]);
      if (wait.count() > 0) snap = coord_->wait_pipeline(parts[3], wait);
      return {200, coordination::to_json(snap)};
    }
    return not_found(method, "/pipelines");
  }

  ApiResponse provenance(const std::string& method, const std::vector<std::string>& parts,
                         const std::map<std::string, std::string>& query, const json& body) const {
    const auto format = query_opt(query, "format").value_or("json");
    if (parts.size() == 3 && parts[1] == "pipelines" && method == "GET") {
      const auto g = coord_->pipeline_graph(parts[2]);
      if (format == "dot") return {200, json::object(), prov::to_dot(g), "text/vnd.graphviz"};
      if (format == "jsonl") return {200, json::object(), prov::export_jsonl(g), "application/jsonl"};
      return {200, to_json(g)};
    }
    if (parts.size() == 4 && parts[1] == "pipelines" && parts[3] == "rerun" && method == "POST") {
      const auto ticket = coord_->rerun(parts[2], body.at("ticket").get<std::string>());
      return {202, coordination::to_json(coord_->get_pipeline_execution(ticket))};
    }
    if (parts.size() == 2 && parts[1] == "diff" && method == "GET") {
      const auto a = query_opt(query, "a");
      const auto b = query_opt(query, "b");
      if (!a || !b) throw Error(ErrorCode::InvalidArgument, "diff needs both a and b pipeline ids");
      const auto report = coord_->diff_pipelines(*a, *b);
      if (format == "dot") {
        const auto g = coord_->pipeline_graph(*b);
        return {200, json::object(), prov::to_dot(g, &report), "text/vnd.graphviz"};
      }
      return {200, prov::to_json(report)};
    }
    if (parts.size() == 2 && parts[1] == "export" && method == "GET") {
      return {200, json::object(), prov::export_jsonl(coord_->provenance().snapshot()), "application/jsonl"};
    }
    return not_found(method, "/provenance");
  }

  std::shared_ptr<Coordinator> coord_;
  std::shared_ptr<const LocalServiceHost> local_;
};

/// Everything one server process runs: the reference services, the
/// provenance store (file-backed when storage is configured), the
/// coordinator and its router.
struct App {
  reference::ReferenceServices reference;
  std::shared_ptr<prov::ProvenanceStore> provenance;
  std::shared_ptr<Coordinator> coordinator;
  std::shared_ptr<ApiRouter> router;

  explicit App(const Config& cfg = {}) {
    std::unique_ptr<prov::StorageBackend> backend;
    if (cfg.storage.empty()) {
      backend = std::make_unique<prov::MemoryBackend>();
    } else {
      std::filesystem::create_directories(cfg.storage);
      backend = std::make_unique<prov::JsonlFileBackend>((std::filesystem::path(cfg.storage) / "provenance.jsonl").string());
    }
    provenance = std::make_shared<prov::ProvenanceStore>(std::move(backend));
    coordinator = std::make_shared<Coordinator>(
        reference.transport, provenance,
        coordination::CoordinatorOptions{cfg.parallelism, cfg.workers, coordination::watts_estimator(cfg.watts), cfg.storage});
    router = std::make_shared<ApiRouter>(coordinator, reference.host);
  }
};

/// cpp-httplib binding for an ApiRouter.
class ApiServer {
 public:
  explicit ApiServer(std::shared_ptr<ApiRouter> router) : router_(std::move(router)) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      std::map<std::string, std::string> query;
      for (const auto& [k, v] : req.params) query[k] = v;
      const auto out = router_->handle(req.method, req.path, query, req.body);
      res.status = out.status;
      res.set_content(out.payload(), out.content_type);
    };
    server_.Get(".*", handler);
    server_.Post(".*", handler);
    server_.Delete(".*", handler);
  }

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else {
      port_ = server_.bind_to_port(host, port) ? port : -1;
    }
    if (port_ < 0) throw Error(ErrorCode::ServiceUnavailable, "cannot bind " + host + ":" + std::to_string(port));
    return port_;
  }

  /// Blocks until stop().
  void listen() { server_.listen_after_bind(); }

  /// Runs the listener on a background thread.
  void start() {
    thread_ = std::jthread([this] { listen(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

  ~ApiServer() { stop(); }

 private:
  std::shared_ptr<ApiRouter> router_;
  httplib::Server server_;
  int port_ = -1;
  std::jthread thread_;
};

}  // namespace xaisvc::api
