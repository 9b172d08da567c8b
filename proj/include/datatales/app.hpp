#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "datatales/catalog.hpp"
#include "datatales/linker.hpp"
#include "datatales/llm.hpp"
#include "datatales/prompt.hpp"
#include "datatales/story_store.hpp"
#include "datatales/verifier.hpp"

namespace datatales {

struct AppConfig {
  BackendMode backend = BackendMode::replay;
  std::string endpoint;
  std::string model = "gpt-3.5-turbo";
  std::string api_key;  // from LLM_API_KEY, never from the config file
  std::filesystem::path fixture_dir = "fixtures";
  std::filesystem::path data_dir = "data";
  std::filesystem::path charts_dir = "charts";
  std::filesystem::path sessions_dir = "sessions";
  std::string host = "127.0.0.1";
  int port = 8080;
  double rel_tol = kDefaultRelTolerance;
  int max_tokens = kDefaultMaxTokens;
  double temperature = kDefaultTemperature;

  void validate() const {
    if (backend == BackendMode::replay && fixture_dir.empty())
      throw Error(ErrorCode::BadRequest, "replay backend requires a fixture directory");
    if (backend != BackendMode::replay && (endpoint.empty() || api_key.empty()))
      throw Error(ErrorCode::BadRequest, std::string(to_string(backend)) + " backend requires an endpoint and LLM_API_KEY");
    if (backend == BackendMode::record && fixture_dir.empty())
      throw Error(ErrorCode::BadRequest, "record backend requires a fixture directory");
  }
};

inline std::string env_api_key() {
  const char* key = std::getenv("LLM_API_KEY");
  return key ? key : "";
}

/// JSON config file; relative directories resolve against the file's folder.
inline AppConfig load_app_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  auto dir = [&](const char* key, const std::filesystem::path& fallback) {
    std::filesystem::path p = j.contains(key) ? std::filesystem::path(j.at(key).get<std::string>()) : fallback;
    return p.is_absolute() ? p : base / p;
  };
  AppConfig c;
  try {
    if (j.contains("backend")) c.backend = backend_mode_from_string(j.at("backend").get<std::string>());
    c.endpoint = j.value("endpoint", c.endpoint);
    c.model = j.value("model", c.model);
    c.fixture_dir = dir("fixtures", c.fixture_dir);
    c.data_dir = dir("data", c.data_dir);
    c.charts_dir = dir("charts", c.charts_dir);
    c.sessions_dir = dir("sessions", c.sessions_dir);
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.rel_tol = j.value("rel_tol", c.rel_tol);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.temperature = j.value("temperature", c.temperature);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  c.api_key = env_api_key();
  return c;
}

struct GenerateRequest {
  std::string session_id;
  std::optional<double> temperature;
  std::optional<PromptOptions> options;
};

/// Response of the transport-independent router.
struct ApiResponse {
  int status = 200;
  json body;
};

inline int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownChart:
    case ErrorCode::UnknownDataset:
    case ErrorCode::UnknownSession:
    case ErrorCode::UnknownStory: return 404;
    case ErrorCode::DuplicateId: return 409;
    case ErrorCode::DataTooLarge: return 413;
    case ErrorCode::FixtureMiss:
    case ErrorCode::TransportError:
    case ErrorCode::ProviderError:
    case ErrorCode::EmptyResponse: return 502;
    case ErrorCode::IoError:
    case ErrorCode::VersionError:
    case ErrorCode::SchemaError:
    case ErrorCode::BindError: return 500;
    default: return 400;
  }
}

inline json error_body(const Error& e) {
  json body{{"error", to_string(e.code())}, {"message", e.what()}};
  if (!e.stage().empty()) body["stage"] = e.stage();
  return body;
}

/// Strips whitespace and one pair of wrapping quotes from a model title.
inline std::string clean_title(std::string_view raw) {
  std::string t = strip_whitespace(raw);
  if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = strip_whitespace(t.substr(1, t.size() - 2));
  return t;
}

/// Runs `fn`, tagging any library error with `stage` unless it already has one.
template <typename Fn>
decltype(auto) run_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (!e.stage().empty()) throw;
    throw e.with_stage(stage);
  }
}

/// compose -> complete -> title -> link -> verify. The returned story has no
/// id yet; storing it is the caller's stage.
inline Story generate_story(const ChartSpec& spec, const Dataset& ds, const std::vector<Annotation>& annotations,
                            const GenerationParams& params, const PromptOptions& opts, const LlmGateway& gateway,
                            double rel_tol = kDefaultRelTolerance) {
  Story story;
  story.params = params;
  story.narrative_prompt = run_stage("compose", [&] { return compose_narrative_prompt(spec, ds, annotations, opts); });
  story.raw_narrative = run_stage("complete", [&] { return gateway.complete(story.narrative_prompt.text, params); });
  story.text = strip_whitespace(story.raw_narrative);
  if (story.text.empty()) throw Error(ErrorCode::EmptyResponse, "narrative is empty", "complete");

  GenerationParams title_params = params;
  title_params.max_tokens = kTitleMaxTokens;
  story.title_prompt = run_stage("title", [&] {
    return compose_title_prompt(story.text, spec.id, story.narrative_prompt.annotation_fingerprint);
  });
  story.raw_title = run_stage("title", [&] { return gateway.complete(story.title_prompt.text, title_params); });
  story.title = clean_title(story.raw_title);

  story.spans = generated_spans(story.text.size());
  story.linked = run_stage("link", [&] { return link_story(story.text, ds, spec); });
  story.flags = run_stage("verify", [&] { return verify_story(story.linked, ds, rel_tol); });
  story.created_at = utc_timestamp();
  return story;
}

/// The generation pipeline and the HTTP API surface, independent of any
/// socket layer. `handle` is what the server and the tests both call.
class App {
 public:
  App(AppConfig config, Catalog catalog, std::shared_ptr<HttpTransport> transport)
      : config_(std::move(config)),
        catalog_(std::move(catalog)),
        fixtures_(std::make_shared<FixtureStore>(config_.fixture_dir)),
        gateway_(GatewayConfig{config_.backend, config_.endpoint, config_.api_key}, fixtures_, std::move(transport)),
        store_(config_.sessions_dir, [this](const std::string& id) { return catalog_.has_chart(id); }) {}

  App(const App&) = delete;
  App& operator=(const App&) = delete;

  const AppConfig& config() const { return config_; }
  const Catalog& catalog() const { return catalog_; }
  SessionStore& store() { return store_; }
  const LlmGateway& gateway() const { return gateway_; }

  GenerationParams params_for(std::optional<double> temperature) const {
    GenerationParams p{config_.model, temperature.value_or(config_.temperature), config_.max_tokens};
    p.validate();
    return p;
  }

  /// Runs the pipeline for the session's chart and annotations, then appends
  /// the story to the session. Failures carry the stage they happened in.
  Story generate(const GenerateRequest& req) {
    const Session session = run_stage("compose", [&] { return store_.get(req.session_id); });
    const ChartSpec& spec = run_stage("compose", [&]() -> const ChartSpec& { return catalog_.chart(session.chart_id); });
    const Dataset& ds = run_stage("compose", [&]() -> const Dataset& { return catalog_.dataset_for(spec); });
    const GenerationParams params = run_stage("compose", [&] { return params_for(req.temperature); });
    Story story = generate_story(spec, ds, session.annotations, params, req.options.value_or(PromptOptions{}),
                                 gateway_, config_.rel_tol);
    return run_stage("store", [&] {
      return store_.mutate(req.session_id, [&](Session& s) {
        story.id = "story-" + std::to_string(s.stories.size() + 1);
        s = add_story(std::move(s), story);
        return s.stories.back();
      });
    });
  }

  Session set_annotations(const std::string& session_id, std::vector<Annotation> anns) {
    const Session session = store_.get(session_id);
    const ChartSpec& spec = catalog_.chart(session.chart_id);
    const Dataset& ds = catalog_.dataset_for(spec);
    for (auto& a : anns) {
      (void)annotation_to_predicate(a);
      if (auto v = validate_annotation(a, spec, ds); !v.empty()) throw Error(ErrorCode::InvalidAnnotation, v.front());
      a = canonicalize_annotation(a, spec, ds);
    }
    return store_.mutate(session_id, [&](Session& s) {
      s.annotations = anns;
      return s;
    });
  }

  Story edit(const std::string& session_id, const std::string& story_id, std::size_t start, std::size_t end,
             const std::string& replacement) {
    return store_.mutate(session_id, [&](Session& s) {
      const ChartSpec& spec = catalog_.chart(s.chart_id);
      const Dataset& ds = catalog_.dataset_for(spec);
      for (auto& story : s.stories) {
        if (story.id != story_id) continue;
        story = apply_edit(story, start, end, replacement, ds, spec, config_.rel_tol);
        return story;
      }
      throw Error(ErrorCode::UnknownStory, "no story " + story_id + " in session " + s.id);
    });
  }

  json links(const std::string& session_id, const std::string& story_id) {
    const Session s = store_.get(session_id);
    const Story* story = s.find_story(story_id);
    if (!story) throw Error(ErrorCode::UnknownStory, "no story " + story_id + " in session " + s.id);
    const Dataset& ds = catalog_.dataset_for(catalog_.chart(s.chart_id));
    json linked = story->linked;
    for (auto& sentence : linked["sentences"]) {
      const auto idx = sentence["index"].get<std::size_t>();
      auto it = story->linked.highlight.find(idx);
      sentence["highlight_rows"] =
          it == story->linked.highlight.end() ? std::vector<std::size_t>{} : resolve_predicate(it->second, ds);
    }
    return json{{"story_id", story->id}, {"linked", linked}, {"flags", story->flags}};
  }

  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body) {
    try {
      return route(method, split_path(path), body);
    } catch (const Error& e) {
      return {http_status_for(e.code()), error_body(e)};
    } catch (const json::exception& e) {
      return {400, json{{"error", "BadRequest"}, {"message", e.what()}}};
    } catch (const std::exception& e) {
      return {500, json{{"error", "Internal"}, {"message", e.what()}}};
    }
  }

 private:
  static std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> out;
    std::string part;
    const auto q = path.find('?');
    for (char c : path.substr(0, q)) {
      if (c == '/') {
        if (!part.empty()) out.push_back(std::move(part));
        part.clear();
      } else {
        part.push_back(c);
      }
    }
    if (!part.empty()) out.push_back(std::move(part));
    return out;
  }

  static json parse_body(const std::string& body) {
    if (body.empty()) return json::object();
    try {
      return json::parse(body);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::BadRequest, std::string("malformed JSON body: ") + e.what());
    }
  }

  json chart_summary(const ChartSpec& spec) const {
    return json{{"id", spec.id}, {"chart_type", to_string(spec.chart_type)}, {"title", spec.title},
                {"dataset_id", spec.dataset_id}};
  }

  ApiResponse route(const std::string& method, const std::vector<std::string>& seg, const std::string& raw_body) {
    const auto n = seg.size();
    auto not_found = [&]() -> ApiResponse {
      return {404, json{{"error", "NotFound"}, {"message", "no route for " + method + " /" + join(seg)}}};
    };
    if (n == 0) return not_found();

    if (seg[0] == "datasets" && n == 1 && method == "GET") {
      json out = json::array();
      for (const auto& [id, ds] : catalog_.datasets())
        out.push_back({{"id", id}, {"fields", fields_to_json(ds)}, {"row_count", ds.row_count()}});
      return {200, out};
    }
    if (seg[0] == "charts" && method == "GET") {
      if (n == 1) {
        json out = json::array();
        for (const auto& [id, spec] : catalog_.charts()) out.push_back(chart_summary(spec));
        return {200, out};
      }
      if (n == 2) {
        const ChartSpec& spec = catalog_.chart(seg[1]);
        const Dataset& ds = catalog_.dataset_for(spec);
        json rows = json::parse(dataset_rows_to_json(ds).dump());
        return {200, json{{"spec", spec}, {"fields", fields_to_json(ds)}, {"rows", rows}}};
      }
    }
    if (seg[0] != "sessions") return not_found();

    if (n == 1 && method == "POST") {
      const json body = parse_body(raw_body);
      if (!body.contains("chart_id") || !body["chart_id"].is_string())
        throw Error(ErrorCode::BadRequest, "chart_id is required");
      return {201, session_to_json(store_.create_session(body["chart_id"].get<std::string>()))};
    }
    if (n < 2) return not_found();
    const std::string& sid = seg[1];

    if (n == 2 && method == "GET") return {200, session_to_json(store_.get(sid))};
    if (n == 3 && seg[2] == "annotations" && method == "PUT") {
      const json body = parse_body(raw_body);
      const json& list = body.is_object() && body.contains("annotations") ? body["annotations"] : body;
      if (!list.is_array()) throw Error(ErrorCode::BadRequest, "expected a list of annotations");
      std::vector<Annotation> anns;
      for (const auto& a : list) anns.push_back(annotation_from_json(a));
      return {200, session_to_json(set_annotations(sid, std::move(anns)))};
    }
    if (n == 3 && seg[2] == "generate" && method == "POST") {
      const json body = parse_body(raw_body);
      GenerateRequest req{sid, std::nullopt, std::nullopt};
      if (body.contains("temperature") && !body["temperature"].is_null()) {
        if (!body["temperature"].is_number()) throw Error(ErrorCode::BadRequest, "temperature must be a number");
        req.temperature = body["temperature"].get<double>();
      }
      if (body.contains("options") && !body["options"].is_null()) req.options = body["options"].get<PromptOptions>();
      return {201, json(generate(req))};
    }
    if (n == 3 && seg[2] == "stories" && method == "GET") return {200, json(store_.get(sid).stories)};
    if (n == 4 && seg[2] == "stories" && method == "GET") {
      const Session s = store_.get(sid);
      const Story* story = s.find_story(seg[3]);
      if (!story) throw Error(ErrorCode::UnknownStory, "no story " + seg[3]);
      return {200, json(*story)};
    }
    if (n == 5 && seg[2] == "stories" && seg[4] == "links" && method == "GET") return {200, links(sid, seg[3])};
    if (n == 5 && seg[2] == "stories" && seg[4] == "edits" && method == "POST") {
      const json body = parse_body(raw_body);
      const auto start = offset_field(body, "start");
      const auto end = offset_field(body, "end");
      if (!body.contains("replacement") || !body["replacement"].is_string())
        throw Error(ErrorCode::BadRequest, "replacement must be a string");
      return {200, json(edit(sid, seg[3], start, end, body["replacement"].get<std::string>()))};
    }
    if (n == 3 && seg[2] == "draft" && method == "PUT") {
      const json body = parse_body(raw_body);
      if (!body.contains("text") || !body["text"].is_string()) throw Error(ErrorCode::BadRequest, "text is required");
      return {200, session_to_json(store_.mutate(sid, [&](Session& s) {
                set_draft(s, body["text"].get<std::string>());
                return s;
              }))};
    }
    if (n == 4 && seg[2] == "draft" && seg[3] == "segments" && method == "POST") {
      const json body = parse_body(raw_body);
      const auto story_id = body.at("story_id").get<std::string>();
      const auto from = offset_field(body, "start");
      const auto to = offset_field(body, "end");
      const auto at = offset_field(body, "at");
      return {200, session_to_json(store_.mutate(sid, [&](Session& s) {
                insert_into_draft(s, story_id, from, to, at);
                return s;
              }))};
    }
    return not_found();
  }

  // Negative or non-integer offsets are range errors, not parse errors.
  static std::size_t offset_field(const json& body, const char* key) {
    if (!body.contains(key) || !body[key].is_number_integer())
      throw Error(ErrorCode::BadRequest, std::string(key) + " must be an integer offset");
    const auto v = body[key].get<long long>();
    if (v < 0) throw Error(ErrorCode::RangeOutOfBounds, std::string(key) + " is negative");
    return static_cast<std::size_t>(v);
  }

  static std::string join(const std::vector<std::string>& seg) {
    std::string out;
    for (std::size_t i = 0; i < seg.size(); ++i) out += (i ? "/" : "") + seg[i];
    return out;
  }

  AppConfig config_;
  Catalog catalog_;
  std::shared_ptr<FixtureStore> fixtures_;
  LlmGateway gateway_;
  SessionStore store_;
};

}  // namespace datatales
