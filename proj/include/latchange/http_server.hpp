#pragma once

// HTTP/1.1 binding of the service core.

#include <filesystem>
#include <string>

#include <httplib.h>

#include "latchange/error.hpp"
#include "latchange/service.hpp"

namespace latchange::service {

inline void install_routes(httplib::Server& server, ServiceCore& core) {
  auto forward = [&core](const httplib::Request& req, httplib::Response& res) {
    Request r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params) r.query[k] = v;
    r.body = req.body;
    const Response out = core.handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  server.Get(R"(/sessions.*)", forward);
  server.Post(R"(/sessions.*)", forward);
  server.Delete(R"(/sessions.*)", forward);
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.set_default_headers({
      {"Access-Control-Allow-Origin", "*"},
      {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
      {"Access-Control-Allow-Headers", "Content-Type"},
  });
}

/// Binds `host:port` (port 0 picks a free port) and returns the bound port; throws on failure.
inline int bind_server(httplib::Server& server, const std::string& host, int port) {
  // httplib's default enables SO_REUSEPORT, which would let a second server share a busy port.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  if (port == 0) {
    const int bound = server.bind_to_any_port(host);
    if (bound <= 0) throw Error(ErrorKind::io, "cannot bind " + host);
    return bound;
  }
  if (!server.bind_to_port(host, port)) {
    throw Error(ErrorKind::io, "cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  }
  return port;
}

/// Optional directory of static UI assets served at "/".
inline void mount_static(httplib::Server& server, const std::filesystem::path& dir) {
  if (dir.empty()) return;
  if (!server.set_mount_point("/", dir.string())) {
    throw Error(ErrorKind::io, "static directory " + dir.string() + " does not exist");
  }
}

}  // namespace latchange::service
