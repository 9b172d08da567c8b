#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "datatales/clock.hpp"
#include "datatales/data_model.hpp"
#include "datatales/digest.hpp"
#include "datatales/error.hpp"

namespace datatales {

inline constexpr double kDefaultTemperature = 0.7;
inline constexpr int kDefaultMaxTokens = 1024;
inline constexpr int kTitleMaxTokens = 64;

struct GenerationParams {
  std::string model;
  double temperature = kDefaultTemperature;
  int max_tokens = kDefaultMaxTokens;

  void validate() const {
    if (!(temperature >= 0.0 && temperature <= 2.0))
      throw Error(ErrorCode::InvalidParams, "temperature must lie in [0, 2]");
    if (max_tokens < 1) throw Error(ErrorCode::InvalidParams, "max_tokens must be at least 1");
  }

  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

inline void to_json(json& j, const GenerationParams& p) {
  j = json{{"model", p.model}, {"temperature", p.temperature}, {"max_tokens", p.max_tokens}};
}

inline void from_json(const json& j, GenerationParams& p) {
  p.model = j.at("model").get<std::string>();
  p.temperature = j.at("temperature").get<double>();
  p.max_tokens = j.at("max_tokens").get<int>();
}

inline std::string format_temperature(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}

/// Text hashed into a fixture key. Temperature is fixed to two decimals so
/// 0.7 and 0.70 share a key while 0.70 and 0.71 do not.
inline std::string fixture_canonical_form(std::string_view prompt, const GenerationParams& params) {
  std::string s = "datatales-fixture-v1\n";
  s += "model:" + params.model + "\n";
  s += "temperature:" + format_temperature(params.temperature) + "\n";
  s += "max_tokens:" + std::to_string(params.max_tokens) + "\n";
  s += "prompt:";
  s += prompt;
  return s;
}

inline std::string fixture_key(std::string_view prompt, const GenerationParams& params) {
  return sha256_hex(fixture_canonical_form(prompt, params));
}

struct Fixture {
  std::string key;
  std::string prompt;
  GenerationParams params;
  std::string response_text;
  std::string recorded_at;
};

inline void to_json(json& j, const Fixture& f) {
  j = json{{"key", f.key},
           {"prompt", f.prompt},
           {"params", f.params},
           {"response_text", f.response_text},
           {"recorded_at", f.recorded_at}};
}

/// Writes `content` next to `path` and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  static std::atomic<unsigned long> counter{0};
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + "." +
         std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "error writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::IoError, "cannot move fixture into place at " + path.string());
  }
}

/// One `<key>.json` file per recorded completion.
class FixtureStore {
 public:
  explicit FixtureStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }

  std::optional<Fixture> find(const std::string& key) const {
    const auto path = path_for(key);
    if (!std::filesystem::exists(path)) return std::nullopt;
    json j;
    try {
      j = json::parse(read_file(path));
      Fixture f;
      f.key = j.at("key").get<std::string>();
      f.prompt = j.at("prompt").get<std::string>();
      f.params = j.at("params").get<GenerationParams>();
      f.response_text = j.at("response_text").get<std::string>();
      f.recorded_at = j.value("recorded_at", std::string{});
      if (f.key != key || fixture_key(f.prompt, f.params) != key)
        throw Error(ErrorCode::SchemaError, "fixture " + path.string() + " does not hash to its key");
      return f;
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaError, "fixture " + path.string() + ": " + e.what());
    }
  }

  Fixture put(std::string prompt, GenerationParams params, std::string response_text,
              std::string recorded_at = utc_timestamp()) const {
    Fixture f{fixture_key(prompt, params), std::move(prompt), std::move(params), std::move(response_text),
              std::move(recorded_at)};
    write_file_atomic(path_for(f.key), json(f).dump(2) + "\n");
    return f;
  }

 private:
  std::filesystem::path dir_;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Minimal POST transport; the live backend never touches sockets directly.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& url, const std::string& body,
                            const std::vector<std::pair<std::string, std::string>>& headers) = 0;
};

enum class BackendMode { live, replay, record };

inline std::string_view to_string(BackendMode m) {
  switch (m) {
    case BackendMode::live: return "live";
    case BackendMode::replay: return "replay";
    case BackendMode::record: return "record";
  }
  return "replay";
}

inline BackendMode backend_mode_from_string(std::string_view s) {
  if (s == "live") return BackendMode::live;
  if (s == "replay") return BackendMode::replay;
  if (s == "record") return BackendMode::record;
  throw Error(ErrorCode::BadRequest, "backend must be live, replay or record");
}

inline std::string strip_whitespace(std::string_view s) { return std::string(trim(s)); }

/// Chat-completion request body carrying a single user message.
inline std::string chat_request_body(std::string_view prompt, const GenerationParams& params) {
  json body{{"model", params.model},
            {"temperature", params.temperature},
            {"max_tokens", params.max_tokens},
            {"messages", json::array({json{{"role", "user"}, {"content", std::string(prompt)}}})}};
  return body.dump();
}

/// First candidate's text from an OpenAI-style response
/// (`choices[0].message.content`, or legacy `choices[0].text`).
inline std::string extract_completion_text(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    throw Error(ErrorCode::ProviderError, "response is not JSON: " + body);
  }
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    throw Error(ErrorCode::EmptyResponse, "response has no choices: " + body);
  const auto& first = j["choices"][0];
  if (first.contains("message") && first["message"].contains("content") && first["message"]["content"].is_string())
    return first["message"]["content"].get<std::string>();
  if (first.contains("text") && first["text"].is_string()) return first["text"].get<std::string>();
  throw Error(ErrorCode::ProviderError, "first choice carries no text: " + body);
}

struct GatewayConfig {
  BackendMode mode = BackendMode::replay;
  std::string endpoint;
  std::string api_key;
};

/// Completion entry point shared by every backend mode. Replay mode reads
/// fixtures only and never calls the transport.
class LlmGateway {
 public:
  LlmGateway(GatewayConfig config, std::shared_ptr<const FixtureStore> fixtures,
             std::shared_ptr<HttpTransport> transport)
      : config_(std::move(config)), fixtures_(std::move(fixtures)), transport_(std::move(transport)) {}

  BackendMode mode() const { return config_.mode; }

  std::string complete(const std::string& prompt, const GenerationParams& params) const {
    params.validate();
    switch (config_.mode) {
      case BackendMode::replay: {
        if (!fixtures_) throw Error(ErrorCode::FixtureMiss, "replay mode has no fixture directory");
        const auto key = fixture_key(prompt, params);
        auto f = fixtures_->find(key);
        if (!f) throw Error(ErrorCode::FixtureMiss, "no fixture for key " + key);
        return f->response_text;
      }
      case BackendMode::live: return call_live(prompt, params);
      case BackendMode::record: {
        if (!fixtures_) throw Error(ErrorCode::IoError, "record mode has no fixture directory");
        auto text = call_live(prompt, params);
        fixtures_->put(prompt, params, text);
        return text;
      }
    }
    return {};
  }

 private:
  std::string call_live(const std::string& prompt, const GenerationParams& params) const {
    if (config_.endpoint.empty() || config_.api_key.empty() || !transport_)
      throw Error(ErrorCode::TransportError, "live completion requires an endpoint and LLM_API_KEY");
    HttpResponse resp;
    try {
      resp = transport_->post(config_.endpoint, chat_request_body(prompt, params),
                              {{"Authorization", "Bearer " + config_.api_key}});
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorCode::TransportError, e.what());
    }
    if (resp.status < 200 || resp.status >= 300)
      throw Error(ErrorCode::ProviderError, "HTTP " + std::to_string(resp.status) + ": " + resp.body);
    auto text = strip_whitespace(extract_completion_text(resp.body));
    if (text.empty()) throw Error(ErrorCode::EmptyResponse, "model returned empty text");
    return text;
  }

  GatewayConfig config_;
  std::shared_ptr<const FixtureStore> fixtures_;
  std::shared_ptr<HttpTransport> transport_;
};

}  // namespace datatales
