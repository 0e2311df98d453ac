// xaisvc: server and command-line client for the XAI orchestration service.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>

#include "xaisvc/api.hpp"
#include "xaisvc/config.hpp"
#include "xaisvc/demo.hpp"

using namespace xaisvc;

namespace {

constexpr int kExitConnection = 2;
constexpr int kExitValidation = 3;
constexpr int kExitServer = 4;

struct CliError {
  int exit_code;
  json body;
};

[[noreturn]] void fail(int exit_code, const std::string& code, const std::string& message, json details = json::object()) {
  json err = {{"code", code}, {"message", message}};
  if (!details.empty()) err["details"] = details;
  throw CliError{exit_code, {{"error", err}}};
}

struct Options {
  std::string server;
  std::string format = "human";
  std::string config;
};

std::string server_address(const Options& o) {
  if (!o.server.empty()) return o.server;
  if (const char* env = std::getenv("XAISVC_SERVER"); env && *env) return env;
  Config cfg;
  if (!o.config.empty()) {
    try {
      cfg = load_config(o.config);
    } catch (const Error& e) {
      fail(kExitValidation, std::string(to_string(e.code())), e.what());
    }
  }
  return cfg.host + ":" + std::to_string(cfg.port);
}

struct Reply {
  int status = 0;
  std::string text;
  json body;
};

class Client {
 public:
  explicit Client(std::string address) : address_(std::move(address)) {
    if (address_.find("://") == std::string::npos) address_ = "http://" + address_;
    try {
      client_ = std::make_unique<httplib::Client>(address_);
    } catch (const std::exception& e) {
      fail(kExitValidation, "InvalidArgument", "bad server address '" + address_ + "'");
    }
    if (!client_->is_valid()) fail(kExitValidation, "InvalidArgument", "bad server address '" + address_ + "'");
    client_->set_connection_timeout(5, 0);
    client_->set_read_timeout(600, 0);
  }

  Reply get(const std::string& path) { return finish(client_->Get(path), "GET", path); }
  Reply post(const std::string& path, const json& body) {
    return finish(client_->Post(path, body.dump(), "application/json"), "POST", path);
  }
  Reply del(const std::string& path) { return finish(client_->Delete(path), "DELETE", path); }

 private:
  Reply finish(const httplib::Result& r, const std::string& method, const std::string& path) {
    if (!r) {
      fail(kExitConnection, "ServiceUnavailable", "cannot reach " + address_ + ": " + httplib::to_string(r.error()),
           {{"server", address_}, {"request", method + " " + path}});
    }
    Reply out{r->status, r->body, json()};
    const auto type = r->get_header_value("Content-Type");
    if (type.find("application/json") != std::string::npos) {
      out.body = json::parse(r->body, nullptr, false);
    }
    if (r->status >= 400) {
      json body = out.body.is_object() ? out.body : json{{"error", {{"code", "DownstreamError"}, {"message", r->body}}}};
      throw CliError{r->status == 400 || r->status == 422 ? kExitValidation : kExitServer, body};
    }
    return out;
  }

  std::string address_;
  std::unique_ptr<httplib::Client> client_;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(kExitValidation, "InvalidArgument", "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  auto j = json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) fail(kExitValidation, "InvalidArgument", "'" + path + "' is not valid JSON");
  return j;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(kExitValidation, "InvalidArgument", "cannot write '" + path + "'");
  out << text;
}

// --- output -----------------------------------------------------------------

struct Printer {
  const Options& opts;

  bool json_mode() const { return opts.format == "json"; }

  /// Single-call commands: body verbatim in json mode.
  void reply(const Reply& r, const std::function<void(const json&)>& human) const {
    if (json_mode() || !r.body.is_object()) {
      std::cout << r.text;
      if (!json_mode() && (r.text.empty() || r.text.back() != '\n')) std::cout << '\n';
      return;
    }
    human(r.body);
  }

  void value(const json& j, const std::function<void(const json&)>& human) const {
    if (json_mode()) {
      std::cout << canonical_dump(j);
      return;
    }
    human(j);
  }
};

void print_pretty(const json& j) { std::cout << j.dump(2) << '\n'; }

void print_execution(const json& e) {
  std::cout << e.value("ticket", "") << "  " << e.value("status", "");
  if (e.contains("pipeline_id")) std::cout << "  pipeline " << e["pipeline_id"].get<std::string>();
  if (e.contains("sheet_id")) std::cout << "  sheet " << e["sheet_id"].get<std::string>();
  std::cout << '\n';
  if (e.contains("results_ref") && e["results_ref"].is_object()) {
    std::cout << "  results  " << e["results_ref"]["hash"].get<std::string>() << '\n';
  }
  if (e.contains("resource_usage") && e["resource_usage"].is_object()) {
    const auto& u = e["resource_usage"];
    std::cout << "  usage    wall " << u.value("wall_seconds", 0.0) << " s, cpu " << u.value("cpu_seconds", 0.0)
              << " s, energy " << u.value("estimated_energy_kwh", 0.0) << " kWh\n";
  }
  if (e.contains("executions") && e["executions"].is_array()) {
    for (const auto& t : e["executions"]) std::cout << "  task     " << t.get<std::string>() << '\n';
  }
  if (e.contains("log")) {
    for (const auto& line : e["log"]) std::cout << "  | " << line.get<std::string>() << '\n';
  }
}

void print_diff(const json& d) {
  if (d["changed"].empty() && d["affected"].empty()) {
    std::cout << "no differences\n";
    return;
  }
  for (const auto& r : d["changed"]) std::cout << "changed   " << r.get<std::string>() << '\n';
  for (const auto& r : d["affected"]) std::cout << "affected  " << r.get<std::string>() << '\n';
}

// --- commands ---------------------------------------------------------------

std::string wait_query(double seconds) {
  if (seconds <= 0) return "";
  std::ostringstream ss;
  ss << "?wait=" << seconds;
  return ss.str();
}

json wait_pipeline(Client& c, const std::string& pid, const std::string& ticket, double seconds, Reply* last = nullptr) {
  auto r = c.get("/pipelines/" + pid + "/executions/" + ticket + wait_query(seconds));
  if (last) *last = r;
  return r.body;
}

json report_for(Client& c, const std::string& pid, const json& execution) {
  if (execution.value("status", "") != "succeeded" || !execution["results_ref"].is_object()) {
    fail(kExitServer, "NotRerunnable", "pipeline execution did not succeed",
         {{"ticket", execution.value("ticket", "")}, {"status", execution.value("status", "")}});
  }
  const std::string hash = execution["results_ref"]["hash"];
  const auto result = c.get("/results/" + hash);
  return demo::build_report(pid, hash, result.body);
}

void run_serve(const Options& opts, const std::string& bind, const std::string& storage, std::optional<double> watts) {
  Config cfg;
  try {
    cfg = load_config(opts.config);
    if (!bind.empty()) parse_bind(bind, cfg);
    if (!storage.empty()) cfg.storage = storage;
    if (watts) cfg.watts = *watts;
    validate(cfg);
  } catch (const Error& e) {
    fail(kExitValidation, std::string(to_string(e.code())), e.what(), e.details());
  }

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  api::App app(cfg);
  api::ApiServer server(app.router);
  const int port = server.bind(cfg.host, cfg.port);
  std::cerr << "xaisvc listening on " << cfg.host << ":" << port
            << (cfg.storage.empty() ? std::string(" (in-memory)") : " storage " + cfg.storage) << std::endl;
  std::jthread stopper([&server, set] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.listen();
  // listen() returned without a signal (bind lost); release the waiter.
  if (stopper.joinable()) pthread_kill(stopper.native_handle(), SIGTERM);
}

}  // namespace

int main(int argc, char** argv) {
  Options opts;
  CLI::App app{"XAI orchestration service: server and command-line client"};
  app.require_subcommand(1);
  app.add_option("--server", opts.server, "Server address host:port (env XAISVC_SERVER, default 127.0.0.1:8080)");
  app.add_option("--format", opts.format, "Output format")->check(CLI::IsMember({"human", "json"}));
  app.add_option("--config", opts.config, "JSON config file shared with the server");

  std::function<void()> action;
  auto client = [&] { return Client(server_address(opts)); };
  Printer out{opts};

  // serve
  auto* serve = app.add_subcommand("serve", "Run the API server");
  std::string bind, storage;
  std::optional<double> watts;
  serve->add_option("--bind", bind, "host:port to listen on (port 0 picks a free port)");
  serve->add_option("--storage", storage, "Directory for results and the provenance log");
  serve->add_option("--watts", watts, "Average power draw for energy estimates");
  serve->callback([&] { action = [&] { run_serve(opts, bind, storage, watts); }; });

  // service
  auto* service = app.add_subcommand("service", "Register and list services");
  service->require_subcommand(1);
  auto* svc_reg = service->add_subcommand("register", "Register a service");
  std::string svc_file, svc_id, svc_kind, svc_endpoint, svc_name, svc_notes;
  svc_reg->add_option("--file", svc_file, "Descriptor JSON file");
  svc_reg->add_option("--id", svc_id, "Service id");
  svc_reg->add_option("--kind", svc_kind, "database|ai_model|approximation_model|xai_method|evaluation");
  svc_reg->add_option("--endpoint", svc_endpoint, "http://... or local://...");
  svc_reg->add_option("--name", svc_name);
  svc_reg->add_option("--notes", svc_notes);
  svc_reg->callback([&] {
    action = [&] {
      json body = svc_file.empty() ? json::object() : read_json_file(svc_file);
      if (!svc_id.empty()) body["service_id"] = svc_id;
      if (!svc_kind.empty()) body["kind"] = svc_kind;
      if (!svc_endpoint.empty()) body["endpoint"] = svc_endpoint;
      if (!svc_name.empty()) body["name"] = svc_name;
      if (!svc_notes.empty()) body["notes"] = svc_notes;
      if (!body.contains("service_id") || !body.contains("kind") || !body.contains("endpoint")) {
        fail(kExitValidation, "InvalidArgument", "service register needs --file or --id, --kind and --endpoint");
      }
      auto c = client();
      out.reply(c.post("/services", body), [](const json& d) {
        std::cout << "registered " << d["service_id"].get<std::string>() << " (" << d["kind"].get<std::string>() << ")\n";
      });
    };
  });
  auto* svc_list = service->add_subcommand("list", "List services");
  std::string list_kind;
  svc_list->add_option("--kind", list_kind, "Only this kind");
  svc_list->callback([&] {
    action = [&] {
      auto c = client();
      out.reply(c.get("/services" + (list_kind.empty() ? std::string() : "?kind=" + list_kind)), [](const json& b) {
        for (const auto& d : b["services"]) {
          std::cout << d["service_id"].get<std::string>() << "  " << d["kind"].get<std::string>() << "  "
                    << d["endpoint"].get<std::string>() << '\n';
        }
      });
    };
  });

  // sheet
  auto* sheet = app.add_subcommand("sheet", "Create and show task sheets");
  sheet->require_subcommand(1);
  auto* sheet_create = sheet->add_subcommand("create", "Create a task sheet from a JSON file");
  std::string sheet_file;
  sheet_create->add_option("--file", sheet_file, "Task sheet JSON file")->required();
  sheet_create->callback([&] {
    action = [&] {
      const auto body = read_json_file(sheet_file);
      auto c = client();
      out.reply(c.post("/task-sheets", body), print_pretty);
    };
  });
  auto* sheet_show = sheet->add_subcommand("show", "Show a task sheet");
  std::string sheet_id;
  sheet_show->add_option("sheet_id", sheet_id)->required();
  sheet_show->callback([&] {
    action = [&] {
      auto c = client();
      out.reply(c.get("/task-sheets/" + sheet_id), print_pretty);
    };
  });

  // run
  auto* run = app.add_subcommand("run", "Execute a task sheet or pipeline");
  run->require_subcommand(1);
  double run_wait = 120;
  auto* run_task = run->add_subcommand("task", "Execute one task sheet");
  std::string task_sheet, input_ref;
  run_task->add_option("sheet_id", task_sheet)->required();
  run_task->add_option("--input-ref", input_ref, "Result hash consumed by an evaluation sheet");
  run_task->add_option("--wait", run_wait, "Seconds to wait for completion (0 returns at once)");
  run_task->callback([&] {
    action = [&] {
      auto c = client();
      json body = {{"sheet_id", task_sheet}};
      if (!input_ref.empty()) body["input_ref"] = input_ref;
      auto r = c.post("/executions", body);
      if (run_wait > 0) r = c.get("/executions/" + r.body["ticket"].get<std::string>() + wait_query(run_wait));
      out.reply(r, print_execution);
    };
  });
  auto* run_pipeline = run->add_subcommand("pipeline", "Execute a pipeline; 'demo' provisions and runs the seeded demo");
  std::string run_pid, report_out;
  std::uint64_t seed = 7;
  run_pipeline->add_option("pipeline_id", run_pid)->required();
  run_pipeline->add_option("--seed", seed, "Demo seed (with pipeline id 'demo')");
  run_pipeline->add_option("--out", report_out, "Report file for 'demo' (default <pipeline>-report.json)");
  run_pipeline->add_option("--wait", run_wait, "Seconds to wait for completion (0 returns at once)");
  run_pipeline->callback([&] {
    action = [&] {
      auto c = client();
      if (run_pid == "demo") {
        demo::provision([&](const demo::ApiCall& call) -> std::pair<int, json> {
          try {
            auto r = call.method == "POST" ? c.post(call.path, call.body) : c.get(call.path);
            return {r.status, r.body};
          } catch (const CliError& e) {
            if (e.exit_code == kExitConnection) throw;
            return {e.exit_code == kExitValidation ? 400 : 409, e.body};
          }
        }, seed);
        const auto pid = demo::pipeline_id(seed);
        const auto started = c.post("/pipelines/" + pid + "/executions", json::object());
        const auto done = wait_pipeline(c, pid, started.body["ticket"], run_wait > 0 ? run_wait : 120);
        const auto report = report_for(c, pid, done);
        const auto path = report_out.empty() ? pid + "-report.json" : report_out;
        write_file(path, report.dump(2) + "\n");
        out.value(report, [&](const json& rep) {
          std::cout << "pipeline " << pid << " ticket " << done["ticket"].get<std::string>() << '\n'
                    << "results  " << rep["results_hash"].get<std::string>() << '\n'
                    << "report   " << path << '\n';
        });
        return;
      }
      auto r = c.post("/pipelines/" + run_pid + "/executions", json::object());
      if (run_wait > 0) wait_pipeline(c, run_pid, r.body["ticket"], run_wait, &r);
      out.reply(r, print_execution);
    };
  });

  // status
  auto* status = app.add_subcommand("status", "Show an execution");
  std::string status_ticket, status_pipeline;
  status->add_option("ticket", status_ticket)->required();
  status->add_option("--pipeline", status_pipeline, "Pipeline id, for pipeline execution tickets");
  status->callback([&] {
    action = [&] {
      auto c = client();
      const auto path = status_pipeline.empty() ? "/executions/" + status_ticket
                                                : "/pipelines/" + status_pipeline + "/executions/" + status_ticket;
      out.reply(c.get(path), print_execution);
    };
  });

  // prov
  auto* prov = app.add_subcommand("prov", "Inspect provenance");
  prov->require_subcommand(1);
  std::string prov_pid, prov_graph_format = "json";
  auto* prov_show = prov->add_subcommand("show", "Provenance graph of a pipeline");
  prov_show->add_option("pipeline_id", prov_pid)->required();
  prov_show->add_option("--graph", prov_graph_format, "Graph representation")->check(CLI::IsMember({"json", "jsonl", "dot"}));
  prov_show->callback([&] {
    action = [&] {
      auto c = client();
      out.reply(c.get("/provenance/pipelines/" + prov_pid + "?format=" + prov_graph_format), [](const json& g) {
        std::cout << "root " << g["root"].get<std::string>() << '\n';
        for (const auto& n : g["nodes"]) std::cout << "  " << n["kind"].get<std::string>() << "  " << n["id"].get<std::string>() << '\n';
        for (const auto& e : g["edges"]) {
          std::cout << "  " << e["from"].get<std::string>() << " -" << e["relation"].get<std::string>() << "-> "
                    << e["to"].get<std::string>() << '\n';
        }
      });
    };
  });
  auto* prov_diff = prov->add_subcommand("diff", "Compare two pipelines");
  std::string diff_a, diff_b;
  bool diff_dot = false;
  prov_diff->add_option("a", diff_a)->required();
  prov_diff->add_option("b", diff_b)->required();
  prov_diff->add_flag("--dot", diff_dot, "Render b's graph as DOT with the differences highlighted");
  prov_diff->callback([&] {
    action = [&] {
      auto c = client();
      out.reply(c.get("/provenance/diff?a=" + diff_a + "&b=" + diff_b + (diff_dot ? "&format=dot" : "")), print_diff);
    };
  });
  auto* prov_rerun = prov->add_subcommand("rerun", "Re-execute a pipeline run from its provenance");
  std::string rerun_pid, rerun_ticket;
  prov_rerun->add_option("pipeline_id", rerun_pid)->required();
  prov_rerun->add_option("ticket", rerun_ticket)->required();
  prov_rerun->add_option("--wait", run_wait, "Seconds to wait for completion (0 returns at once)");
  prov_rerun->callback([&] {
    action = [&] {
      auto c = client();
      auto r = c.post("/provenance/pipelines/" + rerun_pid + "/rerun", {{"ticket", rerun_ticket}});
      if (run_wait > 0) wait_pipeline(c, rerun_pid, r.body["ticket"], run_wait, &r);
      out.reply(r, print_execution);
    };
  });
  auto* prov_export = prov->add_subcommand("export", "Whole provenance store as JSON lines");
  prov_export->callback([&] {
    action = [&] {
      auto c = client();
      std::cout << c.get("/provenance/export").text;
    };
  });

  // report
  auto* report = app.add_subcommand("report", "Evaluation reports");
  report->require_subcommand(1);
  auto* report_export = report->add_subcommand("export", "Write the plot-ready report of a pipeline run");
  std::string export_pid, export_ticket, export_out;
  report_export->add_option("pipeline_id", export_pid)->required();
  report_export->add_option("--ticket", export_ticket, "Pipeline execution (default: latest succeeded)");
  report_export->add_option("--out", export_out, "Output file (default <pipeline>-report.json)");
  report_export->callback([&] {
    action = [&] {
      auto c = client();
      json execution;
      if (!export_ticket.empty()) {
        execution = c.get("/pipelines/" + export_pid + "/executions/" + export_ticket).body;
      } else {
        const auto all = c.get("/pipelines/" + export_pid + "/executions").body["executions"];
        for (const auto& e : all) {
          if (e.value("status", "") == "succeeded") execution = e;
        }
        if (execution.is_null()) {
          fail(kExitServer, "UnknownTicket", "pipeline '" + export_pid + "' has no succeeded execution",
               {{"pipeline_id", export_pid}});
        }
      }
      const auto rep = report_for(c, export_pid, execution);
      const auto path = export_out.empty() ? export_pid + "-report.json" : export_out;
      write_file(path, rep.dump(2) + "\n");
      out.value(rep, [&](const json&) { std::cout << "wrote " << path << '\n'; });
    };
  });

  // demo
  auto* demo_cmd = app.add_subcommand("demo", "Provision and run the full seeded demo scenario");
  std::uint64_t demo_seed = 7;
  bool demo_no_run = false;
  demo_cmd->add_option("--seed", demo_seed, "Scenario seed");
  demo_cmd->add_flag("--provision-only", demo_no_run, "Create services, datasets, sheets and pipelines only");
  demo_cmd->callback([&] {
    action = [&] {
      auto c = client();
      demo::provision([&](const demo::ApiCall& call) -> std::pair<int, json> {
        try {
          auto r = c.post(call.path, call.body);
          return {r.status, r.body};
        } catch (const CliError& e) {
          if (e.exit_code == kExitConnection) throw;
          return {e.exit_code == kExitValidation ? 400 : 409, e.body};
        }
      }, demo_seed);
      json summary = json::array();
      for (const auto& pid : demo::pipeline_ids(demo_seed)) {
        json row = {{"pipeline_id", pid}};
        if (!demo_no_run) {
          const auto started = c.post("/pipelines/" + pid + "/executions", json::object());
          const auto done = wait_pipeline(c, pid, started.body["ticket"], 120);
          row["ticket"] = done["ticket"];
          row["status"] = done["status"];
          row["results_hash"] = done["results_ref"].is_object() ? done["results_ref"]["hash"] : json(nullptr);
        }
        summary.push_back(row);
      }
      out.value({{"pipelines", summary}}, [&](const json& s) {
        for (const auto& row : s["pipelines"]) {
          std::cout << row["pipeline_id"].get<std::string>();
          if (row.contains("status")) {
            std::cout << "  " << row["status"].get<std::string>() << "  " << row["ticket"].get<std::string>();
            if (row["results_hash"].is_string()) std::cout << "  " << row["results_hash"].get<std::string>();
          }
          std::cout << '\n';
        }
      });
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (action) action();
    std::cout.flush();
    return 0;
  } catch (const CliError& e) {
    if (opts.format == "json") {
      std::cout << canonical_dump(e.body);
    } else {
      const auto& err = e.body.contains("error") ? e.body["error"] : e.body;
      std::cerr << "error: " << err.value("code", "Error") << ": " << err.value("message", "") << '\n';
      if (err.contains("details")) std::cerr << "  " << err["details"].dump() << '\n';
    }
    return e.exit_code;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitServer;
  }
}
