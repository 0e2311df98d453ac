#pragma once

// Calling downstream services. An endpoint is either
//   http://host:port/base?query   -- a remote service reached over HTTP, or
//   local://name/base?query       -- a handler registered in-process.
// Both routes speak the same JSON request/response contract, so reference
// services and external services are interchangeable behind an endpoint.

#include <functional>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <string_view>

#include <httplib.h>

#include "xaisvc/error.hpp"
#include "xaisvc/util.hpp"

namespace xaisvc {

struct ServiceRequest {
  std::string method;  // "GET", "POST", "DELETE"
  std::string path;    // path below the service root, starting with '/'
  std::map<std::string, std::string> query;
  json body;
};

struct ServiceResponse {
  int status = 200;
  json body = json::object();
};

using ServiceHandler = std::function<ServiceResponse(const ServiceRequest&)>;

/// Runs a handler and turns thrown Errors into error responses, the same
/// way an HTTP front end would.
inline ServiceResponse invoke_handler(const ServiceHandler& handler, const ServiceRequest& req) {
  try {
    return handler(req);
  } catch (const Error& e) {
    return {http_status(e.code()), e.to_json()};
  } catch (const json::exception& e) {
    return {400, Error(ErrorCode::InvalidArgument, std::string("malformed request: ") + e.what()).to_json()};
  } catch (const std::exception& e) {
    return {500, Error(ErrorCode::DownstreamError, e.what()).to_json()};
  }
}

struct Endpoint {
  std::string scheme;     // "http", "https" or "local"
  std::string authority;  // host[:port] or local service name
  std::string base_path;  // "" or "/segment..."
  std::map<std::string, std::string> query;

  static Endpoint parse(std::string_view url) {
    Endpoint ep;
    auto sep = url.find("://");
    if (sep == std::string_view::npos || sep == 0) {
      throw Error(ErrorCode::InvalidArgument, "endpoint must look like scheme://authority[/path]",
                  {{"endpoint", std::string(url)}});
    }
    ep.scheme = std::string(url.substr(0, sep));
    if (ep.scheme != "http" && ep.scheme != "https" && ep.scheme != "local") {
      throw Error(ErrorCode::InvalidArgument, "unsupported endpoint scheme '" + ep.scheme + "'",
                  {{"endpoint", std::string(url)}});
    }
    std::string_view rest = url.substr(sep + 3);
    std::string_view query;
    if (auto q = rest.find('?'); q != std::string_view::npos) {
      query = rest.substr(q + 1);
      rest = rest.substr(0, q);
    }
    auto slash = rest.find('/');
    ep.authority = std::string(rest.substr(0, slash));
    if (slash != std::string_view::npos) ep.base_path = std::string(rest.substr(slash));
    while (!ep.base_path.empty() && ep.base_path.back() == '/') ep.base_path.pop_back();
    if (ep.authority.empty()) {
      throw Error(ErrorCode::InvalidArgument, "endpoint has no host", {{"endpoint", std::string(url)}});
    }
    while (!query.empty()) {
      auto amp = query.find('&');
      auto part = query.substr(0, amp);
      auto eq = part.find('=');
      if (!part.empty()) {
        ep.query[std::string(part.substr(0, eq))] = eq == std::string_view::npos ? "" : std::string(part.substr(eq + 1));
      }
      if (amp == std::string_view::npos) break;
      query = query.substr(amp + 1);
    }
    return ep;
  }

  std::string query_string() const {
    std::string out;
    for (const auto& [k, v] : query) {
      out += out.empty() ? "?" : "&";
      out += k + "=" + v;
    }
    return out;
  }
};

/// In-process services addressed as local://name.
class LocalServiceHost {
 public:
  void mount(const std::string& name, ServiceHandler handler) {
    std::unique_lock lk(mu_);
    handlers_[name] = std::move(handler);
  }

  std::optional<ServiceHandler> find(const std::string& name) const {
    std::shared_lock lk(mu_);
    auto it = handlers_.find(name);
    if (it == handlers_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::string> names() const {
    std::shared_lock lk(mu_);
    std::vector<std::string> out;
    for (const auto& [k, _] : handlers_) out.push_back(k);
    return out;
  }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, ServiceHandler> handlers_;
};

class Transport {
 public:
  explicit Transport(std::shared_ptr<const LocalServiceHost> local = nullptr,
                     std::chrono::milliseconds connect_timeout = std::chrono::milliseconds(2000),
                     std::chrono::milliseconds read_timeout = std::chrono::milliseconds(60000))
      : local_(std::move(local)), connect_timeout_(connect_timeout), read_timeout_(read_timeout) {}

  /// Calls `path` below the endpoint root; returns the JSON body of a 2xx
  /// reply. Connection failures raise ServiceUnavailable; error replies are
  /// re-raised with the remote error code when it is recognizable.
  json call(const std::string& endpoint, const std::string& method, const std::string& path,
            const json& body = json::object()) const {
    const auto ep = Endpoint::parse(endpoint);
    ServiceResponse resp;
    if (ep.scheme == "local") {
      auto handler = local_ ? local_->find(ep.authority) : std::nullopt;
      if (!handler) {
        throw Error(ErrorCode::ServiceUnavailable, "no local service mounted at '" + endpoint + "'",
                    {{"endpoint", endpoint}});
      }
      ServiceRequest req{method, ep.base_path + path, ep.query, body};
      // Round-trip through text so local calls see exactly what HTTP would carry.
      req.body = json::parse(canonical_dump(body));
      resp = invoke_handler(*handler, req);
      resp.body = json::parse(canonical_dump(resp.body));
    } else {
      resp = http_call(ep, endpoint, method, path, body);
    }
    if (resp.status < 200 || resp.status >= 300) raise_remote(endpoint, resp);
    return resp.body;
  }

 private:
  ServiceResponse http_call(const Endpoint& ep, const std::string& endpoint, const std::string& method,
                            const std::string& path, const json& body) const {
    httplib::Client client(ep.scheme + "://" + ep.authority);
    client.set_connection_timeout(connect_timeout_);
    client.set_read_timeout(read_timeout_);
    const std::string target = ep.base_path + path + ep.query_string();
    httplib::Result res;
    if (method == "GET") {
      res = client.Get(target);
    } else if (method == "DELETE") {
      res = client.Delete(target);
    } else {
      res = client.Post(target, canonical_dump(body), "application/json");
    }
    if (!res) {
      throw Error(ErrorCode::ServiceUnavailable,
                  "cannot reach '" + endpoint + "': " + httplib::to_string(res.error()), {{"endpoint", endpoint}});
    }
    ServiceResponse out;
    out.status = res->status;
    try {
      out.body = res->body.empty() ? json::object() : json::parse(res->body);
    } catch (const json::exception&) {
      throw Error(ErrorCode::DownstreamError, "non-JSON reply from '" + endpoint + "'",
                  {{"endpoint", endpoint}, {"status", res->status}});
    }
    return out;
  }

  [[noreturn]] static void raise_remote(const std::string& endpoint, const ServiceResponse& resp) {
    ErrorCode code = ErrorCode::DownstreamError;
    std::string message = "service '" + endpoint + "' replied " + std::to_string(resp.status);
    json details = {{"endpoint", endpoint}, {"status", resp.status}};
    if (resp.body.is_object() && resp.body.contains("error") && resp.body["error"].is_object()) {
      const auto& err = resp.body["error"];
      if (err.contains("code") && err["code"].is_string()) {
        if (auto c = error_code_from_string(err["code"].get<std::string>())) code = *c;
      }
      if (err.contains("message") && err["message"].is_string()) message += ": " + err["message"].get<std::string>();
      if (err.contains("details")) details["remote"] = err["details"];
    }
    throw Error(code, message, details);
  }

  std::shared_ptr<const LocalServiceHost> local_;
  std::chrono::milliseconds connect_timeout_;
  std::chrono::milliseconds read_timeout_;
};

/// Exposes every local service over HTTP at <prefix>/<name>/..., so a
/// reference service is reachable both as local://name and as
/// http://host:port<prefix>/name.
inline void mount_local_services(httplib::Server& server, std::shared_ptr<const LocalServiceHost> host,
                                 const std::string& prefix = "/ref") {
  auto dispatch = [host, prefix](const std::string& method) {
    return [host, prefix, method](const httplib::Request& req, httplib::Response& res) {
      const std::string name = req.matches[1];
      const std::string rest = req.matches.size() > 2 ? std::string(req.matches[2]) : std::string();
      auto handler = host->find(name);
      ServiceResponse out;
      if (!handler) {
        out = {404, Error(ErrorCode::UnknownService, "no reference service '" + name + "'").to_json()};
      } else {
        ServiceRequest sreq{method, rest.empty() ? "/" : rest, {}, json::object()};
        for (const auto& [k, v] : req.params) sreq.query[k] = v;
        try {
          if (!req.body.empty()) sreq.body = json::parse(req.body);
          out = invoke_handler(*handler, sreq);
        } catch (const json::exception& e) {
          out = {400, Error(ErrorCode::InvalidArgument, std::string("malformed JSON body: ") + e.what()).to_json()};
        }
      }
      res.status = out.status;
      res.set_content(canonical_dump(out.body), "application/json");
    };
  };
  const std::string pattern = prefix + R"(/([a-z0-9-]+)(/.*)?)";
  server.Get(pattern, dispatch("GET"));
  server.Post(pattern, dispatch("POST"));
  server.Delete(pattern, dispatch("DELETE"));
}

}  // namespace xaisvc
