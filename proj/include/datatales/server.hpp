#pragma once

#include <atomic>
#include <csignal>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>

#include "datatales/app.hpp"

namespace datatales {

/// Forwards every request to App::handle.
inline void mount_api(httplib::Server& server, App& app) {
  auto forward = [&app](const httplib::Request& req, httplib::Response& res) {
    const ApiResponse out = app.handle(req.method, req.path, req.body);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  server.Get(R"(/.*)", forward);
  server.Post(R"(/.*)", forward);
  server.Put(R"(/.*)", forward);
}

/// Owns a bound server running on a background thread; stops on destruction.
class RunningServer {
 public:
  RunningServer(App& app, const std::string& host, int port) : server_(std::make_unique<httplib::Server>()) {
    mount_api(*server_, app);
    // httplib's default also sets SO_REUSEPORT, which lets a second server
    // share an occupied port instead of failing.
    server_->set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    if (port == 0) {
      port_ = server_->bind_to_any_port(host);
      if (port_ < 0) throw Error(ErrorCode::BindError, "cannot bind " + host);
    } else {
      if (!server_->bind_to_port(host, port)) throw Error(ErrorCode::BindError, "cannot bind " + host + ":" + std::to_string(port));
      port_ = port;
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }

  RunningServer(const RunningServer&) = delete;
  RunningServer& operator=(const RunningServer&) = delete;

  ~RunningServer() { stop(); }

  int port() const { return port_; }

  void stop() {
    if (!server_) return;
    server_->stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

namespace detail {
inline std::atomic<bool>& shutdown_requested() {
  static std::atomic<bool> flag{false};
  return flag;
}
inline void on_shutdown_signal(int) { shutdown_requested() = true; }
}  // namespace detail

/// Serves until SIGINT or SIGTERM, then shuts down cleanly.
inline void serve(App& app) {
  RunningServer server(app, app.config().host, app.config().port);
  std::signal(SIGINT, detail::on_shutdown_signal);
  std::signal(SIGTERM, detail::on_shutdown_signal);
  while (!detail::shutdown_requested()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
}

}  // namespace datatales
