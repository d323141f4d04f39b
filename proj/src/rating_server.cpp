#include "genref/rating_server.hpp"

#include "httplib.h"

namespace genref::rating {

using nlohmann::json;

namespace {

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, const ServiceError& e) { send(res, e.status, e.body()); }

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    send_error(res, e);
  } catch (const json::exception& e) {
    send_error(res, ServiceError(400, "bad_request", "malformed JSON body", {{"reason", e.what()}}));
  } catch (const std::exception& e) {
    send_error(res, ServiceError(500, "internal_error", e.what()));
  }
}

}  // namespace

Server::Server(Study& study) : study_(study), http_(std::make_unique<httplib::Server>()) {
  http_->Post("/session", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::optional<std::uint64_t> seed;
      if (!req.body.empty()) {
        const json body = json::parse(req.body);
        if (body.contains("seed")) seed = body.at("seed").get<std::uint64_t>();
      }
      send(res, 201, {{"session_id", study_.create_session(seed)}});
    });
  });
  http_->Get(R"(/session/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto task = study_.next_task(req.matches[1]);
      send(res, 200, task ? task_payload(*task) : json{{"done", true}});
    });
  });
  http_->Post("/rating", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const Ack ack = study_.submit(parse_record(json::parse(req.body)));
      send(res, ack.duplicate ? 200 : 201, ack.body);
    });
  });
  http_->Get("/aggregate", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send(res, 200, aggregate_to_json(study_.aggregate())); });
  });
  http_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    send(res, 200, {{"status", "ok"}, {"sessions", study_.session_count()}});
  });
  http_->set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 404 && res.body.empty()) {
      send_error(res, ServiceError(404, "not_found", "no route for " + req.method + " " + req.path));
    }
  });
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) return http_->bind_to_any_port(host.c_str());
  return http_->bind_to_port(host.c_str(), port) ? port : -1;
}

bool Server::run() { return http_->listen_after_bind(); }

void Server::stop() {
  if (http_ && http_->is_running()) http_->stop();
}

}  // namespace genref::rating
