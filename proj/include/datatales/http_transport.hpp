#pragma once

#include <string>
#include <utility>
#include <vector>

#include <httplib.h>

#include "datatales/llm.hpp"

namespace datatales {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::TransportError, "endpoint must be an absolute URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

/// cpp-httplib backed transport. HTTPS needs a build with OpenSSL support.
class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(int timeout_seconds = 120) : timeout_seconds_(timeout_seconds) {}

  HttpResponse post(const std::string& url, const std::string& body,
                    const std::vector<std::pair<std::string, std::string>>& headers) override {
    const auto parts = split_url(url);
    httplib::Client client(parts.origin);
    client.set_connection_timeout(10);
    client.set_read_timeout(timeout_seconds_);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(parts.path, h, body, "application/json");
    if (!res) throw Error(ErrorCode::TransportError, "POST " + url + " failed: " + httplib::to_string(res.error()));
    return HttpResponse{res->status, res->body};
  }

 private:
  int timeout_seconds_;
};

}  // namespace datatales
