#pragma once

#include <memory>
#include <string>

#include "genref/rating.hpp"

namespace httplib {
class Server;
}

namespace genref::rating {

/// HTTP/JSON front end for a Study.
///   POST /session               -> {session_id}
///   GET  /session/{id}/next     -> task payload or {done: true}
///   POST /rating                <- {session_id, task_id, scores[5]}
///   GET  /aggregate             -> aggregate report
///   GET  /health                -> {status: "ok"}
/// Errors are {code, message, detail} with a matching HTTP status.
class Server {
 public:
  explicit Server(Study& study);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds to `port` (0 picks a free port) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  bool run();
  void stop();

 private:
  Study& study_;
  std::unique_ptr<httplib::Server> http_;
};

}  // namespace genref::rating
