#pragma once

// Graph-format provenance: an append-only store of nodes (services, datasets,
// augmentations, task sheets, executions, pipelines) and edges, with
// per-pipeline subgraphs, role-matched diff and JSON-lines export.
//
// Edges point in the direction of influence: a service feeds the sheets that
// use it, a sheet feeds its pipeline and its executions, a pipeline feeds its
// runs. "Affected by a change" is therefore plain forward reachability.

#include <algorithm>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include "xaisvc/error.hpp"
#include "xaisvc/util.hpp"

namespace xaisvc::provenance {

enum class NodeKind {
  microservice,
  dataset,
  augmentation,
  xai_task_sheet,
  evaluation_task_sheet,
  task_execution,
  pipeline,
  pipeline_execution,
};

enum class Relation { uses_service, uses_dataset, derived_from, executes, belongs_to_pipeline, produced };

NLOHMANN_JSON_SERIALIZE_ENUM(NodeKind, {
                                           {NodeKind::microservice, "microservice"},
                                           {NodeKind::dataset, "dataset"},
                                           {NodeKind::augmentation, "augmentation"},
                                           {NodeKind::xai_task_sheet, "xai_task_sheet"},
                                           {NodeKind::evaluation_task_sheet, "evaluation_task_sheet"},
                                           {NodeKind::task_execution, "task_execution"},
                                           {NodeKind::pipeline, "pipeline"},
                                           {NodeKind::pipeline_execution, "pipeline_execution"},
                                       })

NLOHMANN_JSON_SERIALIZE_ENUM(Relation, {
                                           {Relation::uses_service, "uses_service"},
                                           {Relation::uses_dataset, "uses_dataset"},
                                           {Relation::derived_from, "derived_from"},
                                           {Relation::executes, "executes"},
                                           {Relation::belongs_to_pipeline, "belongs_to_pipeline"},
                                           {Relation::produced, "produced"},
                                       })

inline std::string to_string(NodeKind k) { return json(k).get<std::string>(); }
inline std::string to_string(Relation r) { return json(r).get<std::string>(); }

inline std::optional<NodeKind> parse_node_kind(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(NodeKind::pipeline_execution); ++i) {
    if (to_string(static_cast<NodeKind>(i)) == s) return static_cast<NodeKind>(i);
  }
  return std::nullopt;
}

inline std::optional<Relation> parse_relation(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(Relation::produced); ++i) {
    if (to_string(static_cast<Relation>(i)) == s) return static_cast<Relation>(i);
  }
  return std::nullopt;
}

inline bool is_sheet(NodeKind k) { return k == NodeKind::xai_task_sheet || k == NodeKind::evaluation_task_sheet; }
inline bool is_execution(NodeKind k) { return k == NodeKind::task_execution || k == NodeKind::pipeline_execution; }

struct ProvNode {
  std::string id;
  NodeKind kind;
  json attributes = json::object();
  friend bool operator==(const ProvNode&, const ProvNode&) = default;
};

struct ProvEdge {
  std::string from;
  std::string to;
  Relation relation;
  // Position label: "sheet[0]", "task[1]", a service role such as
  // "ai_model", or empty.
  std::string role;
  friend bool operator==(const ProvEdge&, const ProvEdge&) = default;
};

/// A batch of nodes and edges recorded atomically.
struct ProvEvent {
  std::string name;
  std::vector<ProvNode> nodes;
  std::vector<ProvEdge> edges;
};

inline const std::vector<std::string>& required_attributes(NodeKind k) {
  static const std::map<NodeKind, std::vector<std::string>> required{
      {NodeKind::microservice, {"service_id", "kind", "endpoint"}},
      {NodeKind::dataset, {"group_id"}},
      {NodeKind::augmentation, {"method", "parent_group_id"}},
      {NodeKind::xai_task_sheet, {"sheet_id", "parameters"}},
      {NodeKind::evaluation_task_sheet, {"sheet_id", "parameters"}},
      {NodeKind::task_execution, {"ticket", "sheet_id", "status"}},
      {NodeKind::pipeline, {"pipeline_id", "sheet_ids"}},
      {NodeKind::pipeline_execution, {"ticket", "pipeline_id", "status"}},
  };
  return required.at(k);
}

inline bool relation_allowed(Relation r, NodeKind from, NodeKind to) {
  switch (r) {
    case Relation::uses_service:
      return from == NodeKind::microservice && (is_sheet(to) || to == NodeKind::task_execution);
    case Relation::uses_dataset: return from == NodeKind::dataset && (is_sheet(to) || to == NodeKind::task_execution);
    case Relation::belongs_to_pipeline: return is_sheet(from) && to == NodeKind::pipeline;
    case Relation::executes:
      return (is_sheet(from) && to == NodeKind::task_execution) ||
             (from == NodeKind::pipeline && to == NodeKind::pipeline_execution) ||
             (from == NodeKind::pipeline_execution && to == NodeKind::task_execution);
    case Relation::derived_from:
      return (from == to) && (from == NodeKind::dataset || is_execution(from));
    case Relation::produced:
      return (from == NodeKind::augmentation && to == NodeKind::dataset) ||
             (from == NodeKind::task_execution && to == NodeKind::task_execution);
  }
  return false;
}

class ProvGraph {
 public:
  std::string root;

  const std::vector<ProvNode>& nodes() const noexcept { return nodes_; }
  const std::vector<ProvEdge>& edges() const noexcept { return edges_; }

  const ProvNode* find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &nodes_[it->second];
  }
  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  bool empty() const noexcept { return nodes_.empty() && edges_.empty(); }

  void add_node(ProvNode n) {
    index_[n.id] = nodes_.size();
    nodes_.push_back(std::move(n));
  }
  void add_edge(ProvEdge e) { edges_.push_back(std::move(e)); }

  bool has_edge(const ProvEdge& e) const { return std::find(edges_.begin(), edges_.end(), e) != edges_.end(); }

  std::vector<const ProvEdge*> out_edges(const std::string& id) const {
    std::vector<const ProvEdge*> out;
    for (const auto& e : edges_)
      if (e.from == id) out.push_back(&e);
    return out;
  }
  std::vector<const ProvEdge*> in_edges(const std::string& id) const {
    std::vector<const ProvEdge*> out;
    for (const auto& e : edges_)
      if (e.to == id) out.push_back(&e);
    return out;
  }

  std::size_t count(NodeKind k) const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [&](const ProvNode& n) { return n.kind == k; }));
  }

  /// Nodes reachable from `start` along out-edges (excluding `start` unless
  /// a cycle leads back to it).
  std::set<std::string> forward_closure(const std::string& start) const {
    std::set<std::string> seen;
    std::deque<std::string> todo{start};
    while (!todo.empty()) {
      auto cur = todo.front();
      todo.pop_front();
      for (const auto* e : out_edges(cur)) {
        if (seen.insert(e->to).second) todo.push_back(e->to);
      }
    }
    return seen;
  }

  /// Same ids, kinds, attributes, edge multiset and root.
  friend bool structurally_equal(const ProvGraph& a, const ProvGraph& b) {
    if (a.root != b.root || a.nodes_.size() != b.nodes_.size() || a.edges_.size() != b.edges_.size()) return false;
    for (const auto& n : a.nodes_) {
      const auto* m = b.find(n.id);
      if (!m || !(*m == n)) return false;
    }
    auto key = [](const ProvEdge& e) { return e.from + "\x1f" + e.to + "\x1f" + to_string(e.relation) + "\x1f" + e.role; };
    std::multiset<std::string> ea, eb;
    for (const auto& e : a.edges_) ea.insert(key(e));
    for (const auto& e : b.edges_) eb.insert(key(e));
    return ea == eb;
  }

 private:
  std::vector<ProvNode> nodes_;
  std::vector<ProvEdge> edges_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// JSON-lines codec. One object per line:
//   {"attributes":{...},"id":"...","kind":"...","type":"node"}
//   {"from":"...","relation":"...","role":"...","to":"...","type":"edge"}
//   {"id":"...","type":"root"}   (only when the graph has a root)

inline json node_line(const ProvNode& n) {
  return {{"type", "node"}, {"id", n.id}, {"kind", n.kind}, {"attributes", n.attributes}};
}

inline json edge_line(const ProvEdge& e) {
  return {{"type", "edge"}, {"from", e.from}, {"to", e.to}, {"relation", e.relation}, {"role", e.role}};
}

inline std::string export_jsonl(const ProvGraph& g) {
  std::string out;
  for (const auto& n : g.nodes()) out += canonical_dump(node_line(n)) + "\n";
  for (const auto& e : g.edges()) out += canonical_dump(edge_line(e)) + "\n";
  if (!g.root.empty()) out += canonical_dump(json{{"type", "root"}, {"id", g.root}}) + "\n";
  return out;
}

namespace detail {

inline void validate_node(const ProvNode& n) {
  for (const auto& key : required_attributes(n.kind)) {
    if (!n.attributes.contains(key)) {
      throw Error(ErrorCode::SchemaViolation, "node '" + n.id + "' (" + to_string(n.kind) + ") lacks attribute '" + key + "'",
                  {{"node", n.id}, {"attribute", key}});
    }
  }
}

inline ProvNode parse_node(const json& j) {
  auto kind = parse_node_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::SchemaViolation, "unknown node kind");
  ProvNode n{j.at("id").get<std::string>(), *kind, j.at("attributes")};
  if (!n.attributes.is_object()) throw Error(ErrorCode::SchemaViolation, "attributes must be an object");
  validate_node(n);
  return n;
}

inline ProvEdge parse_edge(const json& j) {
  auto rel = parse_relation(j.at("relation").get<std::string>());
  if (!rel) throw Error(ErrorCode::SchemaViolation, "unknown edge relation");
  return {j.at("from").get<std::string>(), j.at("to").get<std::string>(), *rel, j.value("role", std::string())};
}

}  // namespace detail

/// Parses export_jsonl output. Any malformed line raises SchemaViolation
/// naming the 1-based line number.
inline ProvGraph import_jsonl(std::string_view text) {
  ProvGraph g;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "node") {
        auto n = detail::parse_node(j);
        if (const auto* prev = g.find(n.id)) {
          if (*prev == n) continue;
          throw Error(ErrorCode::SchemaViolation, "conflicting duplicate node id '" + n.id + "'");
        }
        g.add_node(std::move(n));
      } else if (type == "edge") {
        auto e = detail::parse_edge(j);
        const auto* from = g.find(e.from);
        const auto* to = g.find(e.to);
        if (!from || !to) throw Error(ErrorCode::SchemaViolation, "edge references an unknown node");
        if (!relation_allowed(e.relation, from->kind, to->kind)) {
          throw Error(ErrorCode::SchemaViolation, "relation " + to_string(e.relation) + " not allowed between " +
                                                      to_string(from->kind) + " and " + to_string(to->kind));
        }
        if (!g.has_edge(e)) g.add_edge(std::move(e));
      } else if (type == "root") {
        g.root = j.at("id").get<std::string>();
        if (!g.contains(g.root)) throw Error(ErrorCode::SchemaViolation, "root references an unknown node");
      } else {
        throw Error(ErrorCode::SchemaViolation, "unknown line type '" + type + "'");
      }
    } catch (const Error& e) {
      throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": " + e.what(), {{"line", line_no}});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": " + e.what(), {{"line", line_no}});
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Storage backends

class StorageBackend {
 public:
  virtual ~StorageBackend() = default;
  virtual void append(const std::vector<std::string>& lines) = 0;
  virtual std::string load() = 0;
};

class MemoryBackend final : public StorageBackend {
 public:
  void append(const std::vector<std::string>& lines) override {
    for (const auto& l : lines) text_ += l + "\n";
  }
  std::string load() override { return text_; }

 private:
  std::string text_;
};

/// Appends JSON lines to a file; the reference persistent backend.
class JsonlFileBackend final : public StorageBackend {
 public:
  explicit JsonlFileBackend(std::string path) : path_(std::move(path)) {}

  void append(const std::vector<std::string>& lines) override {
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error(ErrorCode::InvalidArgument, "cannot open provenance file '" + path_ + "'");
    for (const auto& l : lines) out << l << '\n';
    out.flush();
  }

  std::string load() override {
    std::ifstream in(path_, std::ios::binary);
    if (!in) return {};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

 private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// Store

class ProvenanceStore {
 public:
  explicit ProvenanceStore(std::unique_ptr<StorageBackend> backend = std::make_unique<MemoryBackend>())
      : backend_(std::move(backend)) {
    auto text = backend_->load();
    if (!text.empty()) graph_ = import_jsonl(text);
    graph_.root.clear();
  }

  /// Appends an event atomically. Re-recording an identical node or edge is
  /// a no-op; a different node under an existing id is a Conflict. Edges
  /// must reference nodes already stored or created by the same event.
  void record(const ProvEvent& event) {
    std::unique_lock lk(mu_);
    std::vector<ProvNode> new_nodes;
    std::map<std::string, const ProvNode*> staged;
    for (const auto& n : event.nodes) {
      detail::validate_node(n);
      if (const auto* existing = graph_.find(n.id)) {
        if (!(*existing == n)) {
          throw Error(ErrorCode::Conflict, "node '" + n.id + "' already recorded with different content", {{"node", n.id}});
        }
        continue;
      }
      if (staged.count(n.id)) throw Error(ErrorCode::Conflict, "node '" + n.id + "' appears twice in one event");
      new_nodes.push_back(n);
      staged[n.id] = &new_nodes.back();
    }
    // new_nodes may have reallocated; rebuild the staging index.
    staged.clear();
    for (const auto& n : new_nodes) staged[n.id] = &n;

    auto lookup = [&](const std::string& id) -> const ProvNode* {
      if (auto it = staged.find(id); it != staged.end()) return it->second;
      return graph_.find(id);
    };
    std::vector<ProvEdge> new_edges;
    for (const auto& e : event.edges) {
      const auto* from = lookup(e.from);
      const auto* to = lookup(e.to);
      if (!from || !to) {
        throw Error(ErrorCode::DanglingReference, "edge " + e.from + " -> " + e.to + " references a missing node",
                    {{"from", e.from}, {"to", e.to}, {"event", event.name}});
      }
      if (!relation_allowed(e.relation, from->kind, to->kind)) {
        throw Error(ErrorCode::SchemaViolation,
                    "relation " + to_string(e.relation) + " not allowed from " + to_string(from->kind) + " to " +
                        to_string(to->kind),
                    {{"from", e.from}, {"to", e.to}});
      }
      if (graph_.has_edge(e) || std::find(new_edges.begin(), new_edges.end(), e) != new_edges.end()) continue;
      new_edges.push_back(e);
    }
    if (creates_lineage_cycle(new_edges)) {
      throw Error(ErrorCode::SchemaViolation, "event would create a derived_from/produced cycle", {{"event", event.name}});
    }

    std::vector<std::string> lines;
    for (const auto& n : new_nodes) lines.push_back(canonical_dump(node_line(n)));
    for (const auto& e : new_edges) lines.push_back(canonical_dump(edge_line(e)));
    if (!lines.empty()) backend_->append(lines);
    for (auto& n : new_nodes) graph_.add_node(std::move(n));
    for (auto& e : new_edges) graph_.add_edge(std::move(e));
  }

  ProvGraph snapshot() const {
    std::shared_lock lk(mu_);
    return graph_;
  }

  bool contains(const std::string& id) const {
    std::shared_lock lk(mu_);
    return graph_.contains(id);
  }

  std::optional<ProvNode> node(const std::string& id) const {
    std::shared_lock lk(mu_);
    const auto* n = graph_.find(id);
    if (!n) return std::nullopt;
    return *n;
  }

  /// Subgraph for one pipeline: the pipeline node, everything upstream of it
  /// (sheets, services, datasets, augmentation lineage) and everything
  /// downstream (pipeline runs and their task executions).
  ProvGraph pipeline_graph(const std::string& pipeline_id) const {
    std::shared_lock lk(mu_);
    return induced_pipeline_graph(graph_, pipeline_node_id(pipeline_id));
  }

  static std::string pipeline_node_id(const std::string& pipeline_id) { return "pipeline:" + pipeline_id; }

  static ProvGraph induced_pipeline_graph(const ProvGraph& g, const std::string& root) {
    const auto* r = g.find(root);
    if (!r || r->kind != NodeKind::pipeline) {
      throw Error(ErrorCode::UnknownPipeline, "no provenance for pipeline node '" + root + "'", {{"node", root}});
    }
    std::set<std::string> keep{root};
    std::deque<std::string> todo{root};
    while (!todo.empty()) {
      auto cur = todo.front();
      todo.pop_front();
      for (const auto* e : g.in_edges(cur)) {
        if (keep.insert(e->from).second) todo.push_back(e->from);
      }
    }
    for (const auto& id : g.forward_closure(root)) keep.insert(id);

    ProvGraph out;
    out.root = root;
    for (const auto& n : g.nodes())
      if (keep.count(n.id)) out.add_node(n);
    for (const auto& e : g.edges())
      if (keep.count(e.from) && keep.count(e.to)) out.add_edge(e);
    return out;
  }

 private:
  bool creates_lineage_cycle(const std::vector<ProvEdge>& new_edges) const {
    std::map<std::string, std::vector<std::string>> adj;
    auto add = [&](const ProvEdge& e) {
      if (e.relation == Relation::derived_from || e.relation == Relation::produced) adj[e.from].push_back(e.to);
    };
    for (const auto& e : graph_.edges()) add(e);
    for (const auto& e : new_edges) add(e);
    for (const auto& e : new_edges) {
      if (e.relation != Relation::derived_from && e.relation != Relation::produced) continue;
      // Cycle iff e.from is reachable from e.to.
      std::set<std::string> seen;
      std::deque<std::string> todo{e.to};
      while (!todo.empty()) {
        auto cur = todo.front();
        todo.pop_front();
        if (cur == e.from) return true;
        for (const auto& nxt : adj[cur])
          if (seen.insert(nxt).second) todo.push_back(nxt);
      }
    }
    return false;
  }

  mutable std::shared_mutex mu_;
  ProvGraph graph_;
  std::unique_ptr<StorageBackend> backend_;
};

// ---------------------------------------------------------------------------
// Role matching and diff

/// Structural role of every node reachable in a pipeline graph, e.g.
///   pipeline
///   pipeline/sheet[0]
///   pipeline/sheet[0]/service:ai_model
///   pipeline/sheet[0]/dataset/augmentation
///   pipeline/run[1]/task[0]
/// A node shared by several slots keeps the first role assigned.
inline std::map<std::string, std::string> assign_roles(const ProvGraph& g) {
  std::map<std::string, std::string> role_of;
  if (g.root.empty() || !g.contains(g.root)) {
    throw Error(ErrorCode::IncomparableShapes, "graph is not rooted at a pipeline");
  }
  auto assign = [&](const std::string& id, const std::string& role) {
    return role_of.emplace(id, role).second;
  };
  assign(g.root, "pipeline");

  auto by_role = [](std::vector<const ProvEdge*> v) {
    std::stable_sort(v.begin(), v.end(), [](const ProvEdge* a, const ProvEdge* b) { return a->role < b->role; });
    return v;
  };

  std::function<void(const std::string&, const std::string&)> lineage = [&](const std::string& dataset,
                                                                            const std::string& role) {
    for (const auto* e : g.in_edges(dataset)) {
      const auto* from = g.find(e->from);
      if (e->relation == Relation::produced && from->kind == NodeKind::augmentation) {
        assign(e->from, role + "/augmentation");
      } else if (e->relation == Relation::derived_from && from->kind == NodeKind::dataset) {
        if (assign(e->from, role + "/parent")) lineage(e->from, role + "/parent");
      }
    }
  };

  std::vector<const ProvEdge*> sheets;
  for (const auto* e : g.in_edges(g.root))
    if (e->relation == Relation::belongs_to_pipeline) sheets.push_back(e);
  for (const auto* se : by_role(sheets)) {
    const std::string sheet_role = "pipeline/" + se->role;
    assign(se->from, sheet_role);
    std::vector<const ProvEdge*> services;
    std::vector<const ProvEdge*> datasets;
    for (const auto* e : g.in_edges(se->from)) {
      if (e->relation == Relation::uses_service) services.push_back(e);
      if (e->relation == Relation::uses_dataset) datasets.push_back(e);
    }
    for (const auto* e : by_role(services)) assign(e->from, sheet_role + "/service:" + e->role);
    for (const auto* e : datasets) {
      if (assign(e->from, sheet_role + "/dataset")) lineage(e->from, sheet_role + "/dataset");
    }
  }

  std::size_t run = 0;
  for (const auto& n : g.nodes()) {
    if (n.kind != NodeKind::pipeline_execution) continue;
    bool is_run = false;
    for (const auto* e : g.in_edges(n.id))
      if (e->from == g.root && e->relation == Relation::executes) is_run = true;
    if (!is_run) continue;
    const std::string run_role = "pipeline/run[" + std::to_string(run++) + "]";
    assign(n.id, run_role);
    std::vector<const ProvEdge*> tasks;
    for (const auto* e : g.out_edges(n.id))
      if (e->relation == Relation::executes) tasks.push_back(e);
    for (const auto* e : by_role(tasks)) assign(e->to, run_role + "/" + e->role);
  }
  return role_of;
}

struct DiffReport {
  std::set<std::string> changed;   // roles whose configuration differs (or exists on one side only)
  std::set<std::string> affected;  // roles downstream of a changed role
  std::map<std::string, json> deltas;  // role -> {attribute: {"a": .., "b": ..}}
  std::map<std::string, std::pair<std::optional<std::string>, std::optional<std::string>>> node_ids;

  bool empty() const { return changed.empty() && affected.empty(); }
};

inline json to_json(const DiffReport& d) {
  json nodes = json::object();
  for (const auto& [role, ids] : d.node_ids) {
    nodes[role] = {{"a", ids.first ? json(*ids.first) : json(nullptr)}, {"b", ids.second ? json(*ids.second) : json(nullptr)}};
  }
  json deltas = json::object();
  for (const auto& [role, delta] : d.deltas) deltas[role] = delta;
  return {{"changed", d.changed}, {"affected", d.affected}, {"deltas", deltas}, {"nodes", nodes}};
}

namespace detail {

/// Attributes that name a slot rather than configure it; they legitimately
/// differ between two pipelines and are not compared.
inline const std::set<std::string>& identity_attributes(NodeKind k) {
  static const std::set<std::string> none;
  static const std::set<std::string> service{"registered_at"};
  static const std::set<std::string> augmentation{"child_group_id", "parent_group_id"};
  static const std::set<std::string> sheet{"sheet_id", "name", "service_refs", "dataset_ref", "created_at"};
  static const std::set<std::string> pipeline{"pipeline_id", "name", "sheet_ids", "created_at"};
  switch (k) {
    case NodeKind::microservice: return service;
    case NodeKind::augmentation: return augmentation;
    case NodeKind::xai_task_sheet:
    case NodeKind::evaluation_task_sheet: return sheet;
    case NodeKind::pipeline: return pipeline;
    default: return none;
  }
}

inline json attribute_delta(const ProvNode& a, const ProvNode& b) {
  json delta = json::object();
  if (a.kind != b.kind) delta["kind"] = {{"a", a.kind}, {"b", b.kind}};
  const auto& skip = identity_attributes(a.kind);
  std::set<std::string> keys;
  for (const auto& [k, _] : a.attributes.items()) keys.insert(k);
  for (const auto& [k, _] : b.attributes.items()) keys.insert(k);
  for (const auto& k : keys) {
    if (skip.count(k)) continue;
    const json va = a.attributes.contains(k) ? a.attributes[k] : json(nullptr);
    const json vb = b.attributes.contains(k) ? b.attributes[k] : json(nullptr);
    if (va != vb) delta[k] = {{"a", va}, {"b", vb}};
  }
  return delta;
}

inline bool is_skeleton_role(const std::string& role) {
  // pipeline/sheet[i] and pipeline/sheet[i]/service:<role>
  if (role.rfind("pipeline/sheet[", 0) != 0) return false;
  auto rest = role.substr(role.find(']') + 1);
  return rest.empty() || rest.rfind("/service:", 0) == 0;
}

}  // namespace detail

/// Role-matched comparison of two pipeline graphs. Configuration nodes whose
/// compared attributes differ, or that exist on one side only, are
/// "changed"; everything reachable from a changed node on either side is
/// "affected". The pipeline skeleton (sheet slots, their kinds and service
/// roles) must agree or the graphs are IncomparableShapes.
inline DiffReport diff(const ProvGraph& a, const ProvGraph& b) {
  const auto roles_a = assign_roles(a);
  const auto roles_b = assign_roles(b);
  std::map<std::string, std::string> node_a, node_b;
  for (const auto& [id, role] : roles_a) node_a[role] = id;
  for (const auto& [id, role] : roles_b) node_b[role] = id;

  json unmatched = json::array();
  for (const auto& [role, id] : node_a) {
    if (detail::is_skeleton_role(role) && !node_b.count(role)) unmatched.push_back({{"role", role}, {"side", "a"}});
  }
  for (const auto& [role, id] : node_b) {
    if (detail::is_skeleton_role(role) && !node_a.count(role)) unmatched.push_back({{"role", role}, {"side", "b"}});
  }
  for (const auto& [role, id] : node_a) {
    if (role.find('/', 9) == std::string::npos && role.rfind("pipeline/sheet[", 0) == 0 && node_b.count(role) &&
        a.find(id)->kind != b.find(node_b[role])->kind) {
      unmatched.push_back({{"role", role}, {"side", "both"}, {"reason", "sheet kind differs"}});
    }
  }
  if (!unmatched.empty()) {
    throw Error(ErrorCode::IncomparableShapes, "pipeline skeletons do not match", {{"unmatched", unmatched}});
  }

  DiffReport report;
  std::set<std::string> all_roles;
  for (const auto& [role, _] : node_a) all_roles.insert(role);
  for (const auto& [role, _] : node_b) all_roles.insert(role);
  for (const auto& role : all_roles) {
    std::optional<std::string> ia, ib;
    if (auto it = node_a.find(role); it != node_a.end()) ia = it->second;
    if (auto it = node_b.find(role); it != node_b.end()) ib = it->second;
    report.node_ids[role] = {ia, ib};
    const auto* na = ia ? a.find(*ia) : nullptr;
    const auto* nb = ib ? b.find(*ib) : nullptr;
    const bool exec = (na && is_execution(na->kind)) || (nb && is_execution(nb->kind));
    if (exec) continue;
    if (!na || !nb) {
      report.changed.insert(role);
      report.deltas[role] = {{"presence", {{"a", na != nullptr}, {"b", nb != nullptr}}}};
      continue;
    }
    auto delta = detail::attribute_delta(*na, *nb);
    if (!delta.empty()) {
      report.changed.insert(role);
      report.deltas[role] = delta;
    }
  }

  auto spread = [&](const ProvGraph& g, const std::map<std::string, std::string>& nodes_by_role,
                    const std::map<std::string, std::string>& role_by_node) {
    for (const auto& role : report.changed) {
      auto it = nodes_by_role.find(role);
      if (it == nodes_by_role.end()) continue;
      for (const auto& id : g.forward_closure(it->second)) {
        if (auto r = role_by_node.find(id); r != role_by_node.end() && !report.changed.count(r->second)) {
          report.affected.insert(r->second);
        }
      }
    }
  };
  spread(a, node_a, roles_a);
  spread(b, node_b, roles_b);
  return report;
}

// ---------------------------------------------------------------------------
// DOT rendering

inline std::string to_dot(const ProvGraph& g, const DiffReport* highlight = nullptr) {
  std::map<std::string, std::string> roles;
  if (highlight && !g.root.empty()) roles = assign_roles(g);
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
      if (c == '"' || c == '\\') out.push_back('\\');
      out.push_back(c);
    }
    return out + "\"";
  };
  auto fill = [](NodeKind k) {
    switch (k) {
      case NodeKind::microservice: return "gold";
      case NodeKind::dataset: return "lightgrey";
      case NodeKind::augmentation: return "lightgrey";
      case NodeKind::xai_task_sheet:
      case NodeKind::evaluation_task_sheet: return "palegreen";
      case NodeKind::task_execution:
      case NodeKind::pipeline_execution: return "plum";
      case NodeKind::pipeline: return "lightblue";
    }
    return "white";
  };
  std::ostringstream out;
  out << "digraph provenance {\n  rankdir=LR;\n  node [shape=box, style=filled];\n";
  for (const auto& n : g.nodes()) {
    std::string color = "black";
    if (highlight) {
      if (auto it = roles.find(n.id); it != roles.end()) {
        if (highlight->changed.count(it->second)) color = "red";
        else if (highlight->affected.count(it->second)) color = "blue";
      }
    }
    out << "  " << quote(n.id) << " [label=" << quote(to_string(n.kind) + "\\n" + n.id) << ", fillcolor=" << fill(n.kind)
        << ", color=" << color << (color == "black" ? "" : ", penwidth=3") << "];\n";
  }
  for (const auto& e : g.edges()) {
    std::string label = to_string(e.relation);
    if (!e.role.empty()) label += " (" + e.role + ")";
    out << "  " << quote(e.from) << " -> " << quote(e.to) << " [label=" << quote(label) << "];\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace xaisvc::provenance
