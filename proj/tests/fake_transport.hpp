#pragma once

#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "datatales/llm.hpp"

namespace datatales::testing {

/// Records every request and answers from a queue of canned responses.
class ScriptedTransport final : public HttpTransport {
 public:
  struct Request {
    std::string url;
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
  };

  void enqueue(int status, std::string body) { responses_.push_back({status, std::move(body)}); }
  void enqueue_completion(const std::string& text) {
    enqueue(200, json{{"choices", json::array({json{{"message", {{"role", "assistant"}, {"content", text}}}}})}}.dump());
  }

  HttpResponse post(const std::string& url, const std::string& body,
                    const std::vector<std::pair<std::string, std::string>>& headers) override {
    std::lock_guard lock(mutex_);
    requests_.push_back({url, body, headers});
    if (next_ >= responses_.size()) throw std::runtime_error("connection refused");
    return responses_[next_++];
  }

  std::size_t calls() const { return requests_.size(); }
  const std::vector<Request>& requests() const { return requests_; }

 private:
  std::mutex mutex_;
  std::vector<HttpResponse> responses_;
  std::size_t next_ = 0;
  std::vector<Request> requests_;
};

/// Any use is a test failure: stands in for "no socket may be opened".
class ForbiddenTransport final : public HttpTransport {
 public:
  HttpResponse post(const std::string& url, const std::string&,
                    const std::vector<std::pair<std::string, std::string>>&) override {
    ++calls;
    throw std::logic_error("network access attempted: " + url);
  }
  int calls = 0;
};

}  // namespace datatales::testing
