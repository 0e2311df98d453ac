#pragma once

// Coordination center: service registry, immutable task sheets, pipelines,
// the asynchronous executor with resource accounting, and provenance
// emission for every step.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "xaisvc/error.hpp"
#include "xaisvc/metrics.hpp"
#include "xaisvc/provenance.hpp"
#include "xaisvc/reference/evaluation.hpp"
#include "xaisvc/reference/models.hpp"
#include "xaisvc/saliency.hpp"
#include "xaisvc/transport.hpp"
#include "xaisvc/util.hpp"

namespace xaisvc::coordination {

namespace prov = xaisvc::provenance;

// ---------------------------------------------------------------------------
// Services

enum class ServiceKind { database, ai_model, xai_method, evaluation };

inline std::string to_string(ServiceKind k) {
  switch (k) {
    case ServiceKind::database: return "database";
    case ServiceKind::ai_model: return "ai_model";
    case ServiceKind::xai_method: return "xai_method";
    case ServiceKind::evaluation: return "evaluation";
  }
  return "?";
}

inline ServiceKind parse_service_kind(const std::string& s) {
  for (auto k : {ServiceKind::database, ServiceKind::ai_model, ServiceKind::xai_method, ServiceKind::evaluation}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::InvalidKind, "unknown service kind '" + s + "'",
              {{"kind", s}, {"allowed", {"database", "ai_model", "xai_method", "evaluation"}}});
}

struct ServiceDescriptor {
  std::string service_id;
  ServiceKind kind = ServiceKind::ai_model;
  std::string endpoint;
  std::string name;
  std::string notes;
  friend bool operator==(const ServiceDescriptor&, const ServiceDescriptor&) = default;
};

inline json to_json(const ServiceDescriptor& d) {
  return {{"service_id", d.service_id}, {"kind", to_string(d.kind)}, {"endpoint", d.endpoint}, {"name", d.name},
          {"notes", d.notes}};
}

inline ServiceDescriptor descriptor_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "service descriptor must be an object");
  ServiceDescriptor d;
  try {
    d.service_id = j.at("service_id").get<std::string>();
    d.kind = parse_service_kind(j.at("kind").get<std::string>());
    d.endpoint = j.at("endpoint").get<std::string>();
    d.name = j.value("name", d.service_id);
    d.notes = j.value("notes", std::string());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad service descriptor: ") + e.what());
  }
  require_slug(d.service_id, "service");
  if (d.endpoint.empty()) throw Error(ErrorCode::InvalidArgument, "endpoint must be nonempty");
  Endpoint::parse(d.endpoint);
  return d;
}

// ---------------------------------------------------------------------------
// Task sheets

enum class SheetKind { xai, evaluation };

inline std::string to_string(SheetKind k) { return k == SheetKind::xai ? "xai" : "evaluation"; }

inline SheetKind parse_sheet_kind(const std::string& s) {
  if (s == "xai") return SheetKind::xai;
  if (s == "evaluation") return SheetKind::evaluation;
  throw Error(ErrorCode::InvalidKind, "unknown sheet kind '" + s + "'", {{"kind", s}, {"allowed", {"xai", "evaluation"}}});
}

struct TaskSheet {
  std::string sheet_id;
  SheetKind kind = SheetKind::xai;
  std::string name;
  std::map<std::string, std::string> service_refs;  // role -> service_id
  std::string dataset_ref;
  json parameters = json::object();
  std::string created_at;
};

inline json to_json(const TaskSheet& s) {
  return {{"sheet_id", s.sheet_id},         {"kind", to_string(s.kind)},       {"name", s.name},
          {"service_refs", s.service_refs}, {"dataset_ref", s.dataset_ref},    {"parameters", s.parameters},
          {"created_at", s.created_at}};
}

inline TaskSheet sheet_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "task sheet must be an object");
  TaskSheet s;
  try {
    s.sheet_id = j.at("sheet_id").get<std::string>();
    s.kind = parse_sheet_kind(j.at("kind").get<std::string>());
    s.name = j.value("name", s.sheet_id);
    s.service_refs = j.at("service_refs").get<std::map<std::string, std::string>>();
    s.dataset_ref = j.at("dataset_ref").get<std::string>();
    s.parameters = j.value("parameters", json::object());
    s.created_at = j.value("created_at", std::string());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad task sheet: ") + e.what());
  }
  return s;
}

/// Service kind each sheet role must point at.
inline const std::map<std::string, ServiceKind>& role_kinds() {
  static const std::map<std::string, ServiceKind> roles{
      {"database", ServiceKind::database},      {"ai_model", ServiceKind::ai_model},
      {"approximation_model", ServiceKind::ai_model}, {"xai_method", ServiceKind::xai_method},
      {"evaluation", ServiceKind::evaluation},
  };
  return roles;
}

inline std::vector<std::string> required_roles(SheetKind k) {
  if (k == SheetKind::xai) return {"database", "ai_model", "xai_method"};
  return {"database", "evaluation"};
}

inline std::vector<std::string> allowed_roles(SheetKind k) {
  auto roles = required_roles(k);
  if (k == SheetKind::xai) roles.push_back("approximation_model");
  return roles;
}

/// Fills defaults and range-checks the parameters a sheet kind understands.
/// Other keys are kept verbatim.
inline json normalize_parameters(SheetKind kind, const json& given) {
  if (!given.is_object()) throw Error(ErrorCode::InvalidArgument, "parameters must be an object");
  json p = given;
  auto bad = [](const std::string& key, const json& v, const std::string& why) {
    return Error(ErrorCode::InvalidArgument, "parameter '" + key + "' " + why, {{"parameter", key}, {"value", v}});
  };
  try {
    if (kind == SheetKind::xai) {
      if (!p.contains("q")) p["q"] = 0.5;
      if (!p.contains("fill")) p["fill"] = 0.0;
      if (!p.contains("window")) p["window"] = 2;
      if (!p.contains("stride")) p["stride"] = 1;
      const double q = p["q"].get<double>();
      if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidFraction, "q must lie in (0, 1]", {{"q", p["q"]}});
      const double fill = p["fill"].get<double>();
      if (!(fill >= 0.0 && fill <= 1.0)) throw bad("fill", p["fill"], "must lie in [0, 1]");
      if (p["window"].get<long long>() < 1) throw bad("window", p["window"], "must be at least 1");
      if (p["stride"].get<long long>() < 1) throw bad("stride", p["stride"], "must be at least 1");
    } else {
      if (!p.contains("bins")) p["bins"] = 50;
      if (!p.contains("range_lo")) p["range_lo"] = 0.0;
      if (!p.contains("range_hi")) p["range_hi"] = 1.0;
      if (!p.contains("threshold")) p["threshold"] = 0.5;
      if (!p.contains("distance")) p["distance"] = "abs_delta";
      if (p["bins"].get<long long>() < 1) throw bad("bins", p["bins"], "must be at least 1");
      if (!(p["range_hi"].get<double>() > p["range_lo"].get<double>())) {
        throw Error(ErrorCode::EmptyRange, "range_hi must exceed range_lo");
      }
      metrics::distance_by_name(p["distance"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad parameter type: ") + e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Executions

enum class Status { pending, running, succeeded, failed };

inline std::string to_string(Status s) {
  switch (s) {
    case Status::pending: return "pending";
    case Status::running: return "running";
    case Status::succeeded: return "succeeded";
    case Status::failed: return "failed";
  }
  return "?";
}

inline Status parse_status(const std::string& s) {
  for (auto st : {Status::pending, Status::running, Status::succeeded, Status::failed})
    if (to_string(st) == s) return st;
  throw Error(ErrorCode::InvalidArgument, "unknown status '" + s + "'");
}

inline bool is_terminal(Status s) { return s == Status::succeeded || s == Status::failed; }

inline bool transition_allowed(Status from, Status to) {
  return (from == Status::pending && to == Status::running) || (from == Status::running && is_terminal(to));
}

struct ResourceUsage {
  double wall_seconds = 0.0;
  double cpu_seconds = 0.0;
  double estimated_energy_kwh = 0.0;
};

inline json to_json(const ResourceUsage& r) {
  return {{"wall_seconds", r.wall_seconds}, {"cpu_seconds", r.cpu_seconds}, {"estimated_energy_kwh", r.estimated_energy_kwh}};
}

/// Maps measured CPU seconds to an energy estimate in kWh.
using EnergyEstimator = std::function<double(double cpu_seconds)>;

inline EnergyEstimator watts_estimator(double watts) {
  if (!(watts >= 0.0)) throw Error(ErrorCode::InvalidArgument, "watts must be nonnegative");
  return [watts](double cpu_seconds) { return cpu_seconds * watts / 3600.0 / 1000.0; };
}

inline ResourceUsage make_resource_usage(double wall_seconds, double cpu_seconds, const EnergyEstimator& estimator) {
  ResourceUsage r{std::max(0.0, wall_seconds), std::max(0.0, cpu_seconds), 0.0};
  r.estimated_energy_kwh = estimator(r.cpu_seconds);
  return r;
}

struct ResultsRef {
  std::string hash;
  std::string location;
};

inline json to_json(const ResultsRef& r) { return {{"hash", r.hash}, {"location", r.location}}; }

struct Transition {
  Status status;
  std::string at;
};

struct Execution {
  std::string ticket;
  std::string sheet_id;
  SheetKind kind = SheetKind::xai;
  Status status = Status::pending;
  std::string submitted_at;
  std::optional<std::string> started_at;
  std::optional<std::string> ended_at;
  std::optional<ResultsRef> results_ref;
  std::optional<ResourceUsage> resource_usage;
  std::vector<std::string> log;
  std::vector<Transition> transitions;
  std::optional<std::string> input_ref;
  std::optional<std::string> pipeline_id;
  std::optional<std::string> pipeline_ticket;
};

namespace detail {

template <typename T, typename F>
json optional_json(const std::optional<T>& v, F&& f) {
  return v ? json(f(*v)) : json(nullptr);
}

inline json transitions_json(const std::vector<Transition>& ts) {
  json out = json::array();
  for (const auto& t : ts) out.push_back({{"status", to_string(t.status)}, {"at", t.at}});
  return out;
}

inline auto identity = [](const auto& v) { return v; };

}  // namespace detail

inline json to_json(const Execution& e) {
  return {{"ticket", e.ticket},
          {"sheet_id", e.sheet_id},
          {"kind", to_string(e.kind)},
          {"status", to_string(e.status)},
          {"submitted_at", e.submitted_at},
          {"started_at", detail::optional_json(e.started_at, detail::identity)},
          {"ended_at", detail::optional_json(e.ended_at, detail::identity)},
          {"results_ref", detail::optional_json(e.results_ref, [](const ResultsRef& r) { return to_json(r); })},
          {"resource_usage", detail::optional_json(e.resource_usage, [](const ResourceUsage& r) { return to_json(r); })},
          {"log", e.log},
          {"transitions", detail::transitions_json(e.transitions)},
          {"input_ref", detail::optional_json(e.input_ref, detail::identity)},
          {"pipeline_id", detail::optional_json(e.pipeline_id, detail::identity)},
          {"pipeline_ticket", detail::optional_json(e.pipeline_ticket, detail::identity)}};
}

struct Pipeline {
  std::string pipeline_id;
  std::string name;
  std::vector<std::string> sheet_ids;
  std::string created_at;
};

inline json to_json(const Pipeline& p) {
  return {{"pipeline_id", p.pipeline_id}, {"name", p.name}, {"sheet_ids", p.sheet_ids}, {"created_at", p.created_at}};
}

inline Pipeline pipeline_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "pipeline must be an object");
  Pipeline p;
  try {
    p.pipeline_id = j.at("pipeline_id").get<std::string>();
    p.name = j.value("name", p.pipeline_id);
    p.sheet_ids = j.at("sheet_ids").get<std::vector<std::string>>();
    p.created_at = j.value("created_at", std::string());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad pipeline: ") + e.what());
  }
  return p;
}

struct PipelineExecution {
  std::string ticket;
  std::string pipeline_id;
  Status status = Status::pending;
  std::string submitted_at;
  std::optional<std::string> started_at;
  std::optional<std::string> ended_at;
  std::vector<std::string> task_tickets;
  std::optional<ResultsRef> results_ref;
  std::optional<ResourceUsage> resource_usage;
  std::vector<std::string> log;
  std::vector<Transition> transitions;
  std::optional<std::string> rerun_of;
};

inline json to_json(const PipelineExecution& e) {
  return {{"ticket", e.ticket},
          {"pipeline_id", e.pipeline_id},
          {"status", to_string(e.status)},
          {"submitted_at", e.submitted_at},
          {"started_at", detail::optional_json(e.started_at, detail::identity)},
          {"ended_at", detail::optional_json(e.ended_at, detail::identity)},
          {"executions", e.task_tickets},
          {"results_ref", detail::optional_json(e.results_ref, [](const ResultsRef& r) { return to_json(r); })},
          {"resource_usage", detail::optional_json(e.resource_usage, [](const ResourceUsage& r) { return to_json(r); })},
          {"log", e.log},
          {"transitions", detail::transitions_json(e.transitions)},
          {"rerun_of", detail::optional_json(e.rerun_of, detail::identity)}};
}

/// An execution record behind its own lock. All status changes go through
/// transition(), which enforces pending -> running -> {succeeded, failed}.
template <typename Record>
class Tracked {
 public:
  explicit Tracked(Record r) : data_(std::move(r)) {
    data_.transitions.push_back({data_.status, data_.submitted_at});
  }

  Record snapshot() const {
    std::lock_guard lk(mu_);
    return data_;
  }

  template <typename F>
  void update(F&& f) {
    std::lock_guard lk(mu_);
    f(data_);
  }

  void transition(Status to, const std::string& at) {
    {
      std::lock_guard lk(mu_);
      if (!transition_allowed(data_.status, to)) {
        throw Error(ErrorCode::InvalidTransition, "illegal transition " + to_string(data_.status) + " -> " + to_string(to),
                    {{"ticket", data_.ticket}});
      }
      data_.status = to;
      data_.transitions.push_back({to, at});
      if (to == Status::running) data_.started_at = at;
      if (is_terminal(to)) data_.ended_at = at;
    }
    cv_.notify_all();
  }

  /// Blocks until terminal or the timeout expires; returns the latest snapshot.
  Record wait(std::chrono::milliseconds timeout) const {
    std::unique_lock lk(mu_);
    cv_.wait_for(lk, timeout, [&] { return is_terminal(data_.status); });
    return data_;
  }

 private:
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  Record data_;
};

// ---------------------------------------------------------------------------
// Results

/// Content-addressed payloads: the key is the SHA-256 of the canonical JSON.
/// With a directory configured, payloads are also written to
/// <dir>/results/<hash>.json.
class ResultStore {
 public:
  explicit ResultStore(std::string dir = {}) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(std::filesystem::path(dir_) / "results");
  }

  ResultsRef put(const json& payload, const std::string& producer_ticket = {}) {
    const auto text = canonical_dump(payload);
    ResultsRef ref{sha256_hex(text), "results/" + sha256_hex(text) + ".json"};
    std::unique_lock lk(mu_);
    if (!payloads_.count(ref.hash)) {
      payloads_[ref.hash] = text;
      if (!producer_ticket.empty()) producers_[ref.hash] = producer_ticket;
      if (!dir_.empty()) {
        std::ofstream out(std::filesystem::path(dir_) / ref.location, std::ios::binary);
        out << text;
      }
    }
    return ref;
  }

  json get(const std::string& hash) const {
    {
      std::shared_lock lk(mu_);
      if (auto it = payloads_.find(hash); it != payloads_.end()) return json::parse(it->second);
    }
    if (!dir_.empty() && is_hash(hash)) {
      std::ifstream in(std::filesystem::path(dir_) / "results" / (hash + ".json"), std::ios::binary);
      if (in) {
        std::ostringstream ss;
        ss << in.rdbuf();
        return json::parse(ss.str());
      }
    }
    throw Error(ErrorCode::UnknownResult, "no result with hash '" + hash + "'", {{"hash", hash}});
  }

  bool contains(const std::string& hash) const {
    try {
      get(hash);
      return true;
    } catch (const Error&) {
      return false;
    }
  }

  /// Ticket of the first execution that stored this payload, if known.
  std::optional<std::string> producer_of(const std::string& hash) const {
    std::shared_lock lk(mu_);
    auto it = producers_.find(hash);
    if (it == producers_.end()) return std::nullopt;
    return it->second;
  }

 private:
  static bool is_hash(const std::string& h) {
    return h.size() == 64 && std::all_of(h.begin(), h.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
  }

  std::string dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::string> payloads_;
  std::map<std::string, std::string> producers_;
};

// ---------------------------------------------------------------------------
// Threads and timing

inline double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + static_cast<double>(ts.tv_nsec) * 1e-9;
}

/// Fixed set of threads draining a FIFO job queue. Destruction finishes the
/// queued jobs before joining.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t threads) {
    for (std::size_t i = 0; i < std::max<std::size_t>(threads, 1); ++i) {
      threads_.emplace_back([this] { loop(); });
    }
  }

  ~WorkerPool() {
    {
      std::lock_guard lk(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    threads_.clear();
  }

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  void post(std::function<void()> job) {
    {
      std::lock_guard lk(mu_);
      jobs_.push_back(std::move(job));
    }
    cv_.notify_one();
  }

 private:
  void loop() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stopping_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      job();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  bool stopping_ = false;
  std::vector<std::jthread> threads_;
};

/// Runs f(0..n-1) on up to `parallelism` threads. After a failure no new
/// indices are started; the error from the lowest failing index is rethrown
/// (every lower index was already started, so this is schedule-independent).
/// CPU time of helper threads is added to `helper_cpu`.
template <typename F>
void bounded_for(std::size_t n, std::size_t parallelism, F&& f, std::atomic<double>& helper_cpu) {
  if (parallelism <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  std::size_t err_index = n;
  std::exception_ptr err;
  {
    std::vector<std::jthread> threads;
    for (std::size_t t = 0; t < std::min(parallelism, n); ++t) {
      threads.emplace_back([&] {
        const double cpu0 = thread_cpu_seconds();
        for (;;) {
          if (failed.load()) break;
          const std::size_t i = next.fetch_add(1);
          if (i >= n) break;
          try {
            f(i);
          } catch (...) {
            std::lock_guard lk(err_mu);
            if (i < err_index) {
              err_index = i;
              err = std::current_exception();
            }
            failed.store(true);
          }
        }
        const double used = thread_cpu_seconds() - cpu0;
        double cur = helper_cpu.load();
        while (!helper_cpu.compare_exchange_weak(cur, cur + used)) {
        }
      });
    }
  }
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Coordinator

struct CoordinatorOptions {
  std::size_t parallelism = 4;
  std::size_t workers = 2;
  EnergyEstimator energy = watts_estimator(45.0);
  std::string results_dir;
};

class Coordinator {
 public:
  Coordinator(std::shared_ptr<const Transport> transport, std::shared_ptr<prov::ProvenanceStore> provenance,
              CoordinatorOptions options = {})
      : transport_(std::move(transport)),
        prov_(std::move(provenance)),
        options_(std::move(options)),
        results_(options_.results_dir),
        pool_(std::make_unique<WorkerPool>(options_.workers)) {
    if (options_.parallelism == 0) options_.parallelism = 1;
  }

  ~Coordinator() { pool_.reset(); }

  Coordinator(const Coordinator&) = delete;
  Coordinator& operator=(const Coordinator&) = delete;

  const prov::ProvenanceStore& provenance() const { return *prov_; }
  const ResultStore& results() const { return results_; }
  const Transport& transport() const { return *transport_; }

  // --- registry -------------------------------------------------------------

  std::string register_service(const ServiceDescriptor& d) {
    require_slug(d.service_id, "service");
    if (d.endpoint.empty()) throw Error(ErrorCode::InvalidArgument, "endpoint must be nonempty");
    Endpoint::parse(d.endpoint);
    std::unique_lock lk(services_mu_);
    if (services_.count(d.service_id)) {
      throw Error(ErrorCode::DuplicateId, "service '" + d.service_id + "' already registered", {{"service_id", d.service_id}});
    }
    json attrs = {{"service_id", d.service_id}, {"kind", to_string(d.kind)}, {"endpoint", d.endpoint},
                  {"name", d.name}, {"notes", d.notes}};
    auto node = versioned_node("service:" + d.service_id, prov::NodeKind::microservice, attrs);
    prov_->record({"register_service", {node}, {}});
    services_[d.service_id] = {d, node.id};
    return d.service_id;
  }

  void deregister_service(const std::string& id) {
    std::unique_lock lk(services_mu_);
    if (!services_.erase(id)) throw Error(ErrorCode::UnknownService, "unknown service '" + id + "'", {{"service_id", id}});
  }

  ServiceDescriptor get_service(const std::string& id) const { return service_record(id).descriptor; }

  std::vector<ServiceDescriptor> list_services(std::optional<ServiceKind> kind = std::nullopt) const {
    std::shared_lock lk(services_mu_);
    std::vector<ServiceDescriptor> out;
    for (const auto& [_, r] : services_)
      if (!kind || r.descriptor.kind == *kind) out.push_back(r.descriptor);
    return out;
  }

  // --- task sheets ----------------------------------------------------------

  std::string create_task_sheet(TaskSheet sheet) {
    require_slug(sheet.sheet_id, "sheet");
    if (sheet.name.empty()) sheet.name = sheet.sheet_id;
    for (const auto& role : required_roles(sheet.kind)) {
      if (!sheet.service_refs.count(role)) {
        throw Error(ErrorCode::MissingRole, to_string(sheet.kind) + " sheet needs a '" + role + "' service",
                    {{"role", role}, {"sheet_kind", to_string(sheet.kind)}});
      }
    }
    const auto allowed = allowed_roles(sheet.kind);
    std::map<std::string, ServiceRecord> bound;
    for (const auto& [role, service_id] : sheet.service_refs) {
      if (std::find(allowed.begin(), allowed.end(), role) == allowed.end()) {
        throw Error(ErrorCode::InvalidArgument, "role '" + role + "' is not used by " + to_string(sheet.kind) + " sheets",
                    {{"role", role}});
      }
      auto rec = service_record(service_id);
      const auto want = role_kinds().at(role);
      if (rec.descriptor.kind != want) {
        throw Error(ErrorCode::KindMismatch,
                    "service '" + service_id + "' is " + to_string(rec.descriptor.kind) + ", role '" + role + "' needs " +
                        to_string(want),
                    {{"role", role}, {"service_id", service_id}, {"expected", to_string(want)},
                     {"actual", to_string(rec.descriptor.kind)}});
      }
      bound[role] = rec;
    }
    if (sheet.dataset_ref.empty()) throw Error(ErrorCode::InvalidArgument, "dataset_ref must be nonempty");
    sheet.parameters = normalize_parameters(sheet.kind, sheet.parameters);
    {
      std::shared_lock lk(sheets_mu_);
      if (sheets_.count(sheet.sheet_id)) {
        throw Error(ErrorCode::DuplicateId, "sheet '" + sheet.sheet_id + "' already exists", {{"sheet_id", sheet.sheet_id}});
      }
    }
    if (sheet.created_at.empty()) sheet.created_at = now_rfc3339();

    prov::ProvEvent event{"create_task_sheet", {}, {}};
    const auto dataset_node = resolve_dataset(bound.at("database"), sheet.dataset_ref, event);
    prov::ProvNode node{"sheet:" + sheet.sheet_id,
                        sheet.kind == SheetKind::xai ? prov::NodeKind::xai_task_sheet : prov::NodeKind::evaluation_task_sheet,
                        to_json(sheet)};
    event.nodes.push_back(node);
    for (const auto& [role, rec] : bound) event.edges.push_back({rec.node_id, node.id, prov::Relation::uses_service, role});
    event.edges.push_back({dataset_node, node.id, prov::Relation::uses_dataset, ""});

    std::unique_lock lk(sheets_mu_);
    if (sheets_.count(sheet.sheet_id)) {
      throw Error(ErrorCode::DuplicateId, "sheet '" + sheet.sheet_id + "' already exists", {{"sheet_id", sheet.sheet_id}});
    }
    prov_->record(event);
    sheets_[sheet.sheet_id] = {sheet, dataset_node};
    return sheet.sheet_id;
  }

  TaskSheet get_sheet(const std::string& id) const { return sheet_record(id).sheet; }

  std::vector<TaskSheet> list_sheets() const {
    std::shared_lock lk(sheets_mu_);
    std::vector<TaskSheet> out;
    for (const auto& [_, r] : sheets_) out.push_back(r.sheet);
    return out;
  }

  // --- pipelines ------------------------------------------------------------

  std::string create_pipeline(Pipeline p) {
    require_slug(p.pipeline_id, "pipeline");
    if (p.name.empty()) p.name = p.pipeline_id;
    if (p.sheet_ids.empty()) throw Error(ErrorCode::InvalidArgument, "pipeline needs at least one sheet");
    bool have_xai = false;
    prov::ProvEvent event{"create_pipeline", {}, {}};
    for (std::size_t i = 0; i < p.sheet_ids.size(); ++i) {
      const auto sheet = get_sheet(p.sheet_ids[i]);
      if (sheet.kind == SheetKind::evaluation && !have_xai) {
        throw Error(ErrorCode::InvalidArgument, "evaluation sheet '" + sheet.sheet_id + "' has no preceding xai sheet",
                    {{"position", i}});
      }
      have_xai = have_xai || sheet.kind == SheetKind::xai;
    }
    if (p.created_at.empty()) p.created_at = now_rfc3339();
    const std::string node_id = prov::ProvenanceStore::pipeline_node_id(p.pipeline_id);
    event.nodes.push_back({node_id, prov::NodeKind::pipeline, to_json(p)});
    for (std::size_t i = 0; i < p.sheet_ids.size(); ++i) {
      event.edges.push_back({"sheet:" + p.sheet_ids[i], node_id, prov::Relation::belongs_to_pipeline,
                             "sheet[" + std::to_string(i) + "]"});
    }
    std::unique_lock lk(pipelines_mu_);
    if (pipelines_.count(p.pipeline_id)) {
      throw Error(ErrorCode::DuplicateId, "pipeline '" + p.pipeline_id + "' already exists", {{"pipeline_id", p.pipeline_id}});
    }
    prov_->record(event);
    pipelines_[p.pipeline_id] = p;
    return p.pipeline_id;
  }

  Pipeline get_pipeline(const std::string& id) const {
    std::shared_lock lk(pipelines_mu_);
    auto it = pipelines_.find(id);
    if (it == pipelines_.end()) throw Error(ErrorCode::UnknownPipeline, "unknown pipeline '" + id + "'", {{"pipeline_id", id}});
    return it->second;
  }

  std::vector<Pipeline> list_pipelines() const {
    std::shared_lock lk(pipelines_mu_);
    std::vector<Pipeline> out;
    for (const auto& [_, p] : pipelines_) out.push_back(p);
    return out;
  }

  // --- execution ------------------------------------------------------------

  /// Queues one run of a sheet and returns its ticket immediately.
  std::string submit_task(const std::string& sheet_id, std::optional<std::string> input_ref = std::nullopt) {
    const auto sheet = get_sheet(sheet_id);
    if (sheet.kind == SheetKind::evaluation) {
      if (!input_ref) {
        throw Error(ErrorCode::InvalidArgument, "evaluation sheets need an input_ref (results hash of an xai run)",
                    {{"sheet_id", sheet_id}});
      }
      if (!results_.contains(*input_ref)) {
        throw Error(ErrorCode::UnknownResult, "no result with hash '" + *input_ref + "'", {{"hash", *input_ref}});
      }
    }
    auto rec = new_execution(sheet, input_ref, std::nullopt, std::nullopt);
    std::optional<std::string> producer = input_ref ? results_.producer_of(*input_ref) : std::nullopt;
    pool_->post([this, rec, sheet, input_ref, producer] { run_task(*rec, sheet, input_ref, producer); });
    return rec->snapshot().ticket;
  }

  /// Runs a sheet to completion.
  Execution execute_task(const std::string& sheet_id, std::optional<std::string> input_ref = std::nullopt) {
    return wait_task(submit_task(sheet_id, std::move(input_ref)));
  }

  Execution get_status(const std::string& ticket) const { return execution(ticket)->snapshot(); }

  Execution wait_task(const std::string& ticket, std::chrono::milliseconds timeout = std::chrono::minutes(10)) const {
    return execution(ticket)->wait(timeout);
  }

  std::string submit_pipeline(const std::string& pipeline_id) {
    const auto p = get_pipeline(pipeline_id);
    std::vector<TaskSheet> sheets;
    for (const auto& id : p.sheet_ids) sheets.push_back(get_sheet(id));
    return start_pipeline(p, std::move(sheets), std::nullopt);
  }

  PipelineExecution execute_pipeline(const std::string& pipeline_id) {
    return wait_pipeline(submit_pipeline(pipeline_id));
  }

  PipelineExecution get_pipeline_execution(const std::string& ticket) const { return pipeline_execution(ticket)->snapshot(); }

  PipelineExecution get_pipeline_execution(const std::string& pipeline_id, const std::string& ticket) const {
    auto snap = get_pipeline_execution(ticket);
    if (snap.pipeline_id != pipeline_id) {
      throw Error(ErrorCode::UnknownTicket, "ticket '" + ticket + "' is not an execution of pipeline '" + pipeline_id + "'",
                  {{"ticket", ticket}, {"pipeline_id", pipeline_id}});
    }
    return snap;
  }

  PipelineExecution wait_pipeline(const std::string& ticket,
                                  std::chrono::milliseconds timeout = std::chrono::minutes(10)) const {
    return pipeline_execution(ticket)->wait(timeout);
  }

  std::vector<PipelineExecution> list_pipeline_executions(const std::string& pipeline_id) const {
    std::shared_lock lk(exec_mu_);
    std::vector<PipelineExecution> out;
    for (const auto& [_, r] : pipeline_execs_) {
      auto s = r->snapshot();
      if (s.pipeline_id == pipeline_id) out.push_back(std::move(s));
    }
    return out;
  }

  // --- provenance -----------------------------------------------------------

  prov::ProvGraph pipeline_graph(const std::string& pipeline_id) const { return prov_->pipeline_graph(pipeline_id); }

  prov::DiffReport diff_pipelines(const std::string& a, const std::string& b) const {
    return prov::diff(pipeline_graph(a), pipeline_graph(b));
  }

  /// Re-executes a succeeded pipeline run from the sheet configurations frozen
  /// in provenance. Every service the original used must still be registered
  /// with the same configuration; nothing is substituted.
  std::string rerun(const std::string& pipeline_id, const std::string& ticket) {
    const auto g = prov_->pipeline_graph(pipeline_id);
    const auto* run = g.find("pexec:" + ticket);
    if (!run || run->kind != prov::NodeKind::pipeline_execution) {
      throw Error(ErrorCode::UnknownTicket, "pipeline '" + pipeline_id + "' has no execution '" + ticket + "'",
                  {{"ticket", ticket}, {"pipeline_id", pipeline_id}});
    }
    if (run->attributes.at("status") != "succeeded") {
      throw Error(ErrorCode::NotRerunnable, "execution '" + ticket + "' did not succeed",
                  {{"ticket", ticket}, {"status", run->attributes.at("status")}});
    }
    const auto* pnode = g.find(g.root);
    Pipeline p = pipeline_from_json(pnode->attributes);
    std::vector<TaskSheet> sheets;
    for (const auto& sheet_id : p.sheet_ids) {
      const auto* snode = g.find("sheet:" + sheet_id);
      if (!snode) throw Error(ErrorCode::DanglingReference, "sheet '" + sheet_id + "' missing from provenance");
      auto sheet = sheet_from_json(snode->attributes);
      for (const auto* e : g.in_edges(snode->id)) {
        if (e->relation != prov::Relation::uses_service) continue;
        const auto& service_id = sheet.service_refs.at(e->role);
        std::shared_lock lk(services_mu_);
        auto it = services_.find(service_id);
        if (it == services_.end()) {
          throw Error(ErrorCode::MissingService, "service '" + service_id + "' used by sheet '" + sheet_id + "' is no longer registered",
                      {{"service_id", service_id}, {"role", e->role}, {"sheet_id", sheet_id}});
        }
        if (it->second.node_id != e->from) {
          throw Error(ErrorCode::MissingService,
                      "service '" + service_id + "' was re-registered with a different configuration",
                      {{"service_id", service_id}, {"recorded", e->from}, {"current", it->second.node_id}});
        }
      }
      sheets.push_back(std::move(sheet));
    }
    return start_pipeline(p, std::move(sheets), ticket);
  }

 private:
  struct ServiceRecord {
    ServiceDescriptor descriptor;
    std::string node_id;
  };

  struct SheetRecord {
    TaskSheet sheet;
    std::string dataset_node;
  };

  ServiceRecord service_record(const std::string& id) const {
    std::shared_lock lk(services_mu_);
    auto it = services_.find(id);
    if (it == services_.end()) throw Error(ErrorCode::UnknownService, "unknown service '" + id + "'", {{"service_id", id}});
    return it->second;
  }

  SheetRecord sheet_record(const std::string& id) const {
    std::shared_lock lk(sheets_mu_);
    auto it = sheets_.find(id);
    if (it == sheets_.end()) throw Error(ErrorCode::UnknownSheet, "unknown sheet '" + id + "'", {{"sheet_id", id}});
    return it->second;
  }

  std::shared_ptr<Tracked<Execution>> execution(const std::string& ticket) const {
    std::shared_lock lk(exec_mu_);
    auto it = executions_.find(ticket);
    if (it == executions_.end()) throw Error(ErrorCode::UnknownTicket, "unknown ticket '" + ticket + "'", {{"ticket", ticket}});
    return it->second;
  }

  std::shared_ptr<Tracked<PipelineExecution>> pipeline_execution(const std::string& ticket) const {
    std::shared_lock lk(exec_mu_);
    auto it = pipeline_execs_.find(ticket);
    if (it == pipeline_execs_.end()) {
      throw Error(ErrorCode::UnknownTicket, "unknown pipeline ticket '" + ticket + "'", {{"ticket", ticket}});
    }
    return it->second;
  }

  /// Node id for configuration content: the base id, or a content-suffixed
  /// variant when the base id is already taken by different content.
  prov::ProvNode versioned_node(const std::string& base, prov::NodeKind kind, const json& attrs) const {
    prov::ProvNode node{base, kind, attrs};
    auto existing = prov_->node(base);
    if (existing && !(*existing == node)) node.id = base + "#" + content_hash(attrs).substr(0, 12);
    return node;
  }

  /// Adds dataset (and augmentation lineage) nodes to `event`; returns the
  /// node id of the dataset itself.
  std::string resolve_dataset(const ServiceRecord& db, const std::string& group_id, prov::ProvEvent& event) {
    const auto meta = transport_->call(db.descriptor.endpoint, "GET", "/groups/" + group_id);
    json attrs = {{"group_id", meta.at("group_id")},
                  {"name", meta.value("name", group_id)},
                  {"sample_count", meta.value("sample_count", 0)},
                  {"database", db.descriptor.service_id}};
    auto node = versioned_node("dataset:" + db.descriptor.service_id + ":" + group_id, prov::NodeKind::dataset, attrs);
    event.nodes.push_back(node);
    if (meta.contains("augmentation_of") && meta["augmentation_of"].is_object()) {
      const auto& aug = meta["augmentation_of"];
      const auto parent_id = aug.at("parent_group_id").get<std::string>();
      const auto parent_node = resolve_dataset(db, parent_id, event);
      json aug_attrs = {{"method", aug.at("method")},
                        {"parameters", aug.value("parameters", json::object())},
                        {"parent_group_id", parent_id},
                        {"child_group_id", group_id}};
      auto aug_node = versioned_node("augmentation:" + db.descriptor.service_id + ":" + group_id,
                                     prov::NodeKind::augmentation, aug_attrs);
      event.nodes.push_back(aug_node);
      event.edges.push_back({parent_node, node.id, prov::Relation::derived_from, ""});
      event.edges.push_back({aug_node.id, node.id, prov::Relation::produced, ""});
    }
    return node.id;
  }

  std::shared_ptr<Tracked<Execution>> new_execution(const TaskSheet& sheet, std::optional<std::string> input_ref,
                                                    std::optional<std::string> pipeline_id,
                                                    std::optional<std::string> pipeline_ticket) {
    Execution e;
    e.ticket = tickets_.next();
    e.sheet_id = sheet.sheet_id;
    e.kind = sheet.kind;
    e.submitted_at = now_rfc3339();
    e.input_ref = std::move(input_ref);
    e.pipeline_id = std::move(pipeline_id);
    e.pipeline_ticket = std::move(pipeline_ticket);
    auto rec = std::make_shared<Tracked<Execution>>(std::move(e));
    std::unique_lock lk(exec_mu_);
    executions_[rec->snapshot().ticket] = rec;
    return rec;
  }

  std::string start_pipeline(const Pipeline& p, std::vector<TaskSheet> sheets, std::optional<std::string> rerun_of) {
    PipelineExecution pe;
    pe.ticket = tickets_.next();
    pe.pipeline_id = p.pipeline_id;
    pe.submitted_at = now_rfc3339();
    pe.rerun_of = std::move(rerun_of);
    auto rec = std::make_shared<Tracked<PipelineExecution>>(std::move(pe));
    const auto ticket = rec->snapshot().ticket;
    {
      std::unique_lock lk(exec_mu_);
      pipeline_execs_[ticket] = rec;
    }
    pool_->post([this, rec, p, sheets = std::move(sheets)] { run_pipeline(*rec, p, sheets); });
    return ticket;
  }

  // Calls a sheet's service and tags failures with the service id.
  json call_service(const ServiceRecord& svc, const std::string& method, const std::string& path, const json& body) const {
    try {
      return transport_->call(svc.descriptor.endpoint, method, path, body);
    } catch (const Error& e) {
      auto details = e.details();
      details["service_id"] = svc.descriptor.service_id;
      throw Error(e.code(), "service '" + svc.descriptor.service_id + "': " + e.what(), details);
    }
  }

  json run_xai(const TaskSheet& sheet, const std::map<std::string, ServiceRecord>& svc, Tracked<Execution>& rec,
               std::atomic<double>& helper_cpu) const {
    const auto& db = svc.at("database");
    const auto& model = svc.at("ai_model");
    const auto& xai = svc.at("xai_method");
    const auto* surrogate = svc.count("approximation_model") ? &svc.at("approximation_model") : &model;
    const auto& p = sheet.parameters;
    const double q = p.at("q").get<double>();
    const double fill = p.at("fill").get<double>();
    const json explain_params = {{"window", p.at("window")}, {"stride", p.at("stride")}, {"fill", fill}, {"q", q}};

    const auto listing = call_service(db, "GET", "/groups/" + sheet.dataset_ref + "/samples", json::object());
    std::vector<reference::Sample> samples;
    for (const auto& s : listing.at("samples")) samples.push_back(reference::sample_from_json(s));
    if (samples.empty()) throw Error(ErrorCode::EmptyInput, "dataset '" + sheet.dataset_ref + "' has no samples");
    rec.update([&](Execution& e) { e.log.push_back("fetched " + std::to_string(samples.size()) + " samples from " + db.descriptor.service_id); });

    struct Outcome {
      std::optional<reference::ExplanationRecord> record;
      std::optional<std::string> excluded;
      json method;
    };
    std::vector<Outcome> outcomes(samples.size());
    bounded_for(
        samples.size(), options_.parallelism,
        [&](std::size_t i) {
          const auto& s = samples[i];
          try {
            const auto original = reference::prediction_from_json(
                call_service(model, "POST", "/predict", {{"image", to_json(s.image)}}));
            const auto reply = call_service(xai, "POST", "/explain",
                                            {{"image", to_json(s.image)},
                                             {"model_endpoint", surrogate->descriptor.endpoint},
                                             {"params", explain_params},
                                             {"sample_id", s.sample_id}});
            Mask mask = reply.contains("mask") ? mask_from_json(reply["mask"])
                                               : threshold_mask(saliency_from_json(reply.at("saliency")), q);
            if (mask.height != s.image.height() || mask.width != s.image.width()) {
              throw Error(ErrorCode::DownstreamError, "xai reply mask does not match image dimensions",
                          {{"service_id", xai.descriptor.service_id}});
            }
            const auto masked = apply_mask(s.image, mask, fill, s.sample_id, q);
            const auto after = reference::prediction_from_json(
                call_service(model, "POST", "/predict", {{"image", to_json(masked.image)}}));
            const metrics::Confidence oc(reference::probability_of(original, original.label));
            const metrics::Confidence mc(reference::probability_of(after, original.label));
            Outcome& out = outcomes[i];
            out.method = reply.value("method", json::object());
            try {
              const auto delta = metrics::prediction_change(oc, mc);
              out.record = reference::ExplanationRecord{{s.sample_id, xai.descriptor.service_id, oc, mc, delta},
                                                        s.label, original.label};
            } catch (const Error& e) {
              if (e.code() != ErrorCode::ZeroDenominator) throw;
              out.excluded = s.sample_id;
            }
          } catch (const Error& e) {
            auto details = e.details();
            details["sample_id"] = s.sample_id;
            throw Error(e.code(), "sample '" + s.sample_id + "': " + e.what(), details);
          }
        },
        helper_cpu);

    std::vector<reference::ExplanationRecord> records;
    std::vector<std::string> excluded;
    json method = json::object();
    for (auto& o : outcomes) {
      if (o.record) records.push_back(std::move(*o.record));
      if (o.excluded) excluded.push_back(*o.excluded);
      if (method.empty() && !o.method.empty()) method = o.method;
    }
    std::sort(records.begin(), records.end(),
              [](const auto& a, const auto& b) { return a.explanation.sample_id < b.explanation.sample_id; });
    std::sort(excluded.begin(), excluded.end());
    if (!excluded.empty()) {
      std::string ids;
      for (const auto& id : excluded) ids += (ids.empty() ? "" : ", ") + id;
      rec.update([&](Execution& e) {
        e.log.push_back("excluded " + std::to_string(excluded.size()) + " samples with zero original confidence: " + ids);
      });
    }
    json explanations = json::array();
    for (const auto& r : records) explanations.push_back(reference::to_json(r));
    json excluded_json = json::array();
    for (const auto& id : excluded) excluded_json.push_back({{"sample_id", id}, {"reason", "ZeroDenominator"}});
    json payload = {{"kind", "xai"},
                    {"dataset_ref", sheet.dataset_ref},
                    {"parameters", sheet.parameters},
                    {"method_id", xai.descriptor.service_id},
                    {"method", method},
                    {"model", model.descriptor.service_id},
                    {"sample_count", samples.size()},
                    {"explanations", explanations},
                    {"excluded", excluded_json}};
    if (surrogate != &model) payload["approximation_model"] = surrogate->descriptor.service_id;
    return payload;
  }

  json run_evaluation(const TaskSheet& sheet, const std::map<std::string, ServiceRecord>& svc,
                      const std::optional<std::string>& input_ref) const {
    if (!input_ref) throw Error(ErrorCode::InvalidArgument, "evaluation needs an input_ref");
    const auto input = results_.get(*input_ref);
    if (input.value("kind", std::string()) != "xai") {
      throw Error(ErrorCode::InvalidArgument, "input_ref does not name an xai result", {{"hash", *input_ref}});
    }
    const auto& p = sheet.parameters;
    json options = {{"bins", p.at("bins")},           {"range_lo", p.at("range_lo")}, {"range_hi", p.at("range_hi")},
                    {"threshold", p.at("threshold")}, {"distance", p.at("distance")}};
    const auto report = call_service(svc.at("evaluation"), "POST", "/evaluate",
                                     {{"explanations", input.at("explanations")}, {"options", options}});
    return {{"kind", "evaluation"},
            {"input_ref", *input_ref},
            {"parameters", sheet.parameters},
            {"evaluator", svc.at("evaluation").descriptor.service_id},
            {"method_id", input.value("method_id", std::string())},
            {"report", report}};
  }

  /// Runs one execution to its terminal state on the calling thread.
  /// Provenance is written before the terminal status becomes visible.
  void run_task(Tracked<Execution>& rec, const TaskSheet& sheet, const std::optional<std::string>& input_ref,
                const std::optional<std::string>& producer_ticket) {
    const auto wall0 = std::chrono::steady_clock::now();
    const double cpu0 = thread_cpu_seconds();
    std::atomic<double> helper_cpu{0.0};
    rec.transition(Status::running, now_rfc3339());

    std::map<std::string, ServiceRecord> svc;
    std::optional<ResultsRef> ref;
    std::string error_line;
    try {
      for (const auto& [role, service_id] : sheet.service_refs) {
        std::shared_lock lk(services_mu_);
        auto it = services_.find(service_id);
        if (it == services_.end()) {
          throw Error(ErrorCode::MissingService, "service '" + service_id + "' (" + role + ") is not registered",
                      {{"service_id", service_id}, {"role", role}});
        }
        svc[role] = it->second;
      }
      const json payload = sheet.kind == SheetKind::xai ? run_xai(sheet, svc, rec, helper_cpu)
                                                        : run_evaluation(sheet, svc, input_ref);
      ref = results_.put(payload, rec.snapshot().ticket);
    } catch (const Error& e) {
      error_line = std::string(to_string(e.code())) + ": " + e.what();
    } catch (const std::exception& e) {
      error_line = std::string("internal error: ") + e.what();
    }

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    const auto usage = make_resource_usage(wall, thread_cpu_seconds() - cpu0 + helper_cpu.load(), options_.energy);
    const Status final_status = ref ? Status::succeeded : Status::failed;
    rec.update([&](Execution& e) {
      e.resource_usage = usage;
      if (ref) {
        e.results_ref = ref;
        e.log.push_back("succeeded; results " + ref->hash);
      } else {
        e.log.push_back("failed: " + error_line);
      }
    });
    const auto ended_at = now_rfc3339();
    const auto snap = rec.snapshot();

    json attrs = {{"ticket", snap.ticket},
                  {"sheet_id", snap.sheet_id},
                  {"status", to_string(final_status)},
                  {"submitted_at", snap.submitted_at},
                  {"started_at", snap.started_at.value_or("")},
                  {"ended_at", ended_at},
                  {"results_hash", ref ? json(ref->hash) : json(nullptr)},
                  {"results_location", ref ? json(ref->location) : json(nullptr)},
                  {"resource_usage", to_json(usage)},
                  {"input_ref", detail::optional_json(input_ref, detail::identity)},
                  {"pipeline_ticket", detail::optional_json(snap.pipeline_ticket, detail::identity)},
                  {"log", snap.log}};
    const std::string node_id = "exec:" + snap.ticket;
    prov::ProvEvent event{"execute_task", {{node_id, prov::NodeKind::task_execution, attrs}}, {}};
    event.edges.push_back({"sheet:" + sheet.sheet_id, node_id, prov::Relation::executes, ""});
    for (const auto& [role, r] : svc) event.edges.push_back({r.node_id, node_id, prov::Relation::uses_service, role});
    if (auto it = sheets_dataset_node(sheet.sheet_id)) {
      event.edges.push_back({*it, node_id, prov::Relation::uses_dataset, ""});
    }
    if (producer_ticket && prov_->contains("exec:" + *producer_ticket)) {
      event.edges.push_back({"exec:" + *producer_ticket, node_id, prov::Relation::produced, ""});
    }
    try {
      prov_->record(event);
    } catch (const Error& e) {
      rec.update([&](Execution& x) { x.log.push_back(std::string("provenance not recorded: ") + e.what()); });
    }
    rec.transition(final_status, ended_at);
  }

  std::optional<std::string> sheets_dataset_node(const std::string& sheet_id) const {
    std::shared_lock lk(sheets_mu_);
    if (auto it = sheets_.find(sheet_id); it != sheets_.end()) return it->second.dataset_node;
    // Sheet rebuilt from provenance: follow its uses_dataset edge.
    lk.unlock();
    const auto g = prov_->snapshot();
    for (const auto* e : g.in_edges("sheet:" + sheet_id))
      if (e->relation == prov::Relation::uses_dataset) return e->from;
    return std::nullopt;
  }

  void run_pipeline(Tracked<PipelineExecution>& rec, const Pipeline& p, const std::vector<TaskSheet>& sheets) {
    const auto wall0 = std::chrono::steady_clock::now();
    rec.transition(Status::running, now_rfc3339());
    const auto pticket = rec.snapshot().ticket;
    std::optional<std::string> last_xai_hash;
    std::optional<std::string> last_xai_ticket;
    std::optional<ResultsRef> final_ref;
    bool ok = true;
    double cpu = 0.0;
    for (std::size_t i = 0; i < sheets.size(); ++i) {
      const auto& sheet = sheets[i];
      std::optional<std::string> input = sheet.kind == SheetKind::evaluation ? last_xai_hash : std::nullopt;
      std::optional<std::string> producer = sheet.kind == SheetKind::evaluation ? last_xai_ticket : std::nullopt;
      auto task = new_execution(sheet, input, p.pipeline_id, pticket);
      const auto tticket = task->snapshot().ticket;
      rec.update([&](PipelineExecution& e) { e.task_tickets.push_back(tticket); });
      run_task(*task, sheet, input, producer);
      const auto done = task->snapshot();
      if (done.resource_usage) cpu += done.resource_usage->cpu_seconds;
      if (done.status != Status::succeeded) {
        ok = false;
        rec.update([&](PipelineExecution& e) {
          e.log.push_back("sheet[" + std::to_string(i) + "] '" + sheet.sheet_id + "' failed (" + tticket +
                          "): " + (done.log.empty() ? std::string() : done.log.back()));
          if (i + 1 < sheets.size()) e.log.push_back("remaining sheets not executed");
        });
        break;
      }
      rec.update([&](PipelineExecution& e) {
        e.log.push_back("sheet[" + std::to_string(i) + "] '" + sheet.sheet_id + "' succeeded (" + tticket + ")");
      });
      final_ref = done.results_ref;
      if (sheet.kind == SheetKind::xai) {
        last_xai_hash = done.results_ref->hash;
        last_xai_ticket = tticket;
      }
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    const auto usage = make_resource_usage(wall, cpu, options_.energy);
    const Status final_status = ok ? Status::succeeded : Status::failed;
    rec.update([&](PipelineExecution& e) {
      e.resource_usage = usage;
      if (ok) e.results_ref = final_ref;
    });
    const auto ended_at = now_rfc3339();
    const auto snap = rec.snapshot();
    json attrs = {{"ticket", snap.ticket},
                  {"pipeline_id", snap.pipeline_id},
                  {"status", to_string(final_status)},
                  {"submitted_at", snap.submitted_at},
                  {"started_at", snap.started_at.value_or("")},
                  {"ended_at", ended_at},
                  {"task_tickets", snap.task_tickets},
                  {"results_hash", ok && final_ref ? json(final_ref->hash) : json(nullptr)},
                  {"resource_usage", to_json(usage)},
                  {"rerun_of", detail::optional_json(snap.rerun_of, detail::identity)}};
    const std::string node_id = "pexec:" + snap.ticket;
    prov::ProvEvent event{"execute_pipeline", {{node_id, prov::NodeKind::pipeline_execution, attrs}}, {}};
    event.edges.push_back({prov::ProvenanceStore::pipeline_node_id(p.pipeline_id), node_id, prov::Relation::executes, ""});
    for (std::size_t i = 0; i < snap.task_tickets.size(); ++i) {
      if (prov_->contains("exec:" + snap.task_tickets[i])) {
        event.edges.push_back({node_id, "exec:" + snap.task_tickets[i], prov::Relation::executes,
                               "task[" + std::to_string(i) + "]"});
      }
    }
    if (snap.rerun_of) event.edges.push_back({"pexec:" + *snap.rerun_of, node_id, prov::Relation::derived_from, ""});
    try {
      prov_->record(event);
    } catch (const Error& e) {
      rec.update([&](PipelineExecution& x) { x.log.push_back(std::string("provenance not recorded: ") + e.what()); });
    }
    rec.transition(final_status, ended_at);
  }

  std::shared_ptr<const Transport> transport_;
  std::shared_ptr<prov::ProvenanceStore> prov_;
  CoordinatorOptions options_;
  ResultStore results_;
  UlidGenerator tickets_;

  mutable std::shared_mutex services_mu_;
  std::map<std::string, ServiceRecord> services_;
  mutable std::shared_mutex sheets_mu_;
  std::map<std::string, SheetRecord> sheets_;
  mutable std::shared_mutex pipelines_mu_;
  std::map<std::string, Pipeline> pipelines_;
  mutable std::shared_mutex exec_mu_;
  std::map<std::string, std::shared_ptr<Tracked<Execution>>> executions_;
  std::map<std::string, std::shared_ptr<Tracked<PipelineExecution>>> pipeline_execs_;

  // Last member: destroyed first, so queued jobs finish while everything
  // they touch is still alive.
  std::unique_ptr<WorkerPool> pool_;
};

}  // namespace xaisvc::coordination
