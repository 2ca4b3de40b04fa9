#include "stepwise/label_http.hpp"

#include "httplib.h"

namespace stepwise::service {

json task_view(const LabelTask& task) {
  json steps = json::array();
  for (std::size_t i = 0; i < task.solution.steps.size(); ++i) {
    steps.push_back({{"index", i}, {"text", task.solution.steps[i]}});
  }
  json j = {{"task_id", task.task_id},
            {"generation", task.generation},
            {"problem", {{"statement", task.statement}, {"ground_truth_answer", task.ground_truth_answer}}},
            {"solution_id", task.solution.id},
            {"steps", steps},
            {"final_answer", task.solution.final_answer}};
  if (task.lease) j["lease"] = {{"labeler_id", task.lease->labeler_id}, {"expires_at", task.lease->expires_at}};
  return j;
}

TaskInput task_input_from_json(const json& j) {
  TaskInput in;
  in.solution = solution_from_json(j.at("solution"));
  in.statement = j.value("statement", "");
  in.ground_truth_answer = j.value("ground_truth_answer", "");
  return in;
}

GenerationRequest generation_request_from_json(const json& j) {
  GenerationRequest r;
  for (const json& t : j.value("tasks", json::array())) r.tasks.push_back(task_input_from_json(t));
  for (const json& q : j.value("qc_items", json::array())) r.qc_items.push_back(qc_item_from_json(q));
  return r;
}

namespace {

int status_for(ServiceError::Kind kind) {
  switch (kind) {
    case ServiceError::Kind::not_found: return 404;
    case ServiceError::Kind::unauthorized: return 403;
    case ServiceError::Kind::stale_lease: return 409;
    case ServiceError::Kind::conflict: return 409;
    case ServiceError::Kind::contract_violation: return 422;
    case ServiceError::Kind::invalid_argument: return 400;
  }
  return 500;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, {{"error", message}});
}

// Runs a handler, mapping service and parse errors onto HTTP statuses.
template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    reply_error(res, status_for(e.kind()), e.what());
  } catch (const json::exception& e) {
    reply_error(res, 400, std::string("bad request: ") + e.what());
  } catch (const std::invalid_argument& e) {
    reply_error(res, 400, e.what());
  } catch (const std::exception& e) {
    reply_error(res, 500, e.what());
  }
}

}  // namespace

struct LabelHttpServer::Impl {
  LabelService& service;
  HttpOptions options;
  httplib::Server server;
  int port = -1;

  Impl(LabelService& s, HttpOptions o) : service(s), options(std::move(o)) {
    // httplib also sets SO_REUSEPORT, which would let a second server share the port.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    routes();
  }

  void routes() {
    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, {{"status", "ok"}}); });

    server.Get("/api/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.has_param("labeler")) return reply_error(res, 400, "missing labeler parameter");
        auto task = service.next_task(req.get_param_value("labeler"));
        if (!task) {
          res.status = 204;
          return;
        }
        reply(res, 200, task_view(*task));
      });
    });

    server.Post(R"(/api/tasks/([^/]+)/labels)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        const auto labeler = body.at("labeler").get<std::string>();
        std::vector<StepLabel> ratings;
        for (const json& r : body.at("ratings")) {
          auto label = parse_step_label(r.get<std::string>());
          if (!label) return reply_error(res, 400, "unknown rating " + r.dump());
          ratings.push_back(*label);
        }
        const SubmitResult result = service.submit_labels(req.matches[1], labeler, ratings);
        json out = {{"accepted", true}, {"task_id", result.task_id}};
        if (result.qc_pass) out["qc"] = {{"pass", *result.qc_pass}};
        if (result.labeler_status) out["labeler_status"] = to_string(*result.labeler_status);
        reply(res, 200, out);
      });
    });

    server.Post("/api/admin/generations", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const GenerationRequest request = generation_request_from_json(json::parse(req.body));
        const std::uint32_t gen = service.start_generation(request);
        reply(res, 201, {{"generation", gen}, {"tasks", request.tasks.size()}, {"qc_items", request.qc_items.size()}});
      });
    });

    server.Post("/api/admin/qc_items", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        std::vector<QcItem> items;
        for (const json& q : body.at("qc_items")) items.push_back(qc_item_from_json(q));
        service.add_qc_items(items);
        reply(res, 201, {{"qc_items", items.size()}});
      });
    });

    server.Post("/api/admin/injections", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        std::optional<std::uint64_t> priority;
        if (body.contains("priority")) priority = body["priority"].get<std::uint64_t>();
        reply(res, 201, {{"task_id", service.inject_task(task_input_from_json(body), priority)}});
      });
    });

    server.Post(R"(/api/admin/labelers/([^/]+)/admit)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        service.admit_labeler(req.matches[1]);
        reply(res, 200, to_json(*service.labeler(req.matches[1])));
      });
    });

    server.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, service.stats()); });
    });

    server.Get(R"(/api/labelers/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto profile = service.labeler(req.matches[1]);
        if (!profile) return reply_error(res, 404, "unknown labeler " + std::string(req.matches[1]));
        reply(res, 200, to_json(*profile));
      });
    });

    if (options.static_dir) {
      if (!server.set_mount_point("/", options.static_dir->string())) {
        throw std::runtime_error("static directory " + options.static_dir->string() + " does not exist");
      }
    }
  }
};

LabelHttpServer::LabelHttpServer(LabelService& service, HttpOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {}

LabelHttpServer::~LabelHttpServer() { stop(); }

int LabelHttpServer::bind() {
  if (impl_->options.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(impl_->options.host);
  } else if (impl_->server.bind_to_port(impl_->options.host, impl_->options.port)) {
    impl_->port = impl_->options.port;
  } else {
    impl_->port = -1;
  }
  if (impl_->port < 0) {
    throw std::runtime_error("cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  }
  return impl_->port;
}

void LabelHttpServer::serve() {
  if (impl_->port < 0) throw std::logic_error("serve() before bind()");
  impl_->server.listen_after_bind();
}

void LabelHttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace stepwise::service
