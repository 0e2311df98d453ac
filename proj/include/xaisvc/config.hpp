#pragma once

// Server configuration: a JSON file plus environment overrides.
//
//   {"bind": "127.0.0.1:8080", "storage": "/var/lib/xaisvc",
//    "watts": 45, "parallelism": 4, "workers": 2}
//
//   XAISVC_BIND, XAISVC_STORAGE, XAISVC_WATTS, XAISVC_PARALLELISM

#include <cstdlib>
#include <fstream>
#include <string>

#include "xaisvc/error.hpp"
#include "xaisvc/util.hpp"

namespace xaisvc {

struct Config {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string storage;  // empty: keep everything in memory
  double watts = 45.0;
  std::size_t parallelism = 4;  // per-task fan-out bound
  std::size_t workers = 2;      // concurrent executions
};

inline void parse_bind(const std::string& bind, Config& cfg) {
  auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "bind address must be host:port", {{"bind", bind}});
  cfg.host = bind.substr(0, colon);
  try {
    std::size_t used = 0;
    const auto port_text = bind.substr(colon + 1);
    cfg.port = std::stoi(port_text, &used);
    if (used != port_text.size()) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bind port is not a number", {{"bind", bind}});
  }
  if (cfg.host.empty() || cfg.port < 0 || cfg.port > 65535) {
    throw Error(ErrorCode::InvalidArgument, "bind address out of range", {{"bind", bind}});
  }
}

inline void apply_config_json(const json& j, Config& cfg) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
  if (j.contains("bind")) parse_bind(j["bind"].get<std::string>(), cfg);
  cfg.storage = j.value("storage", cfg.storage);
  cfg.watts = j.value("watts", cfg.watts);
  cfg.parallelism = j.value("parallelism", cfg.parallelism);
  cfg.workers = j.value("workers", cfg.workers);
}

namespace detail {

inline const char* env(const char* name) {
  const char* v = std::getenv(name);
  return v && *v ? v : nullptr;
}

}  // namespace detail

inline void apply_env(Config& cfg) {
  if (auto v = detail::env("XAISVC_BIND")) parse_bind(v, cfg);
  if (auto v = detail::env("XAISVC_STORAGE")) cfg.storage = v;
  try {
    if (auto v = detail::env("XAISVC_WATTS")) cfg.watts = std::stod(v);
    if (auto v = detail::env("XAISVC_PARALLELISM")) cfg.parallelism = std::stoul(v);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "XAISVC_WATTS / XAISVC_PARALLELISM must be numbers");
  }
}

inline void validate(const Config& cfg) {
  if (!(cfg.watts >= 0.0)) throw Error(ErrorCode::InvalidArgument, "watts must be nonnegative");
  if (cfg.parallelism == 0 || cfg.workers == 0) {
    throw Error(ErrorCode::InvalidArgument, "parallelism and workers must be at least 1");
  }
}

/// File (optional) then environment; later sources win.
inline Config load_config(const std::string& path = {}) {
  Config cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::InvalidArgument, "cannot read config file '" + path + "'");
    try {
      apply_config_json(json::parse(in), cfg);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, std::string("bad config file: ") + e.what());
    }
  }
  apply_env(cfg);
  validate(cfg);
  return cfg;
}

}  // namespace xaisvc
