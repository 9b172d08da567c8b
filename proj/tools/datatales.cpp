// datatales command line: generate, prompt, link, verify, record-fixtures, serve.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "datatales/app.hpp"
#include "datatales/http_transport.hpp"
#include "datatales/server.hpp"

using namespace datatales;

namespace {

struct Common {
  std::string config_path;
  std::string backend;
  std::string data_dir, charts_dir, fixture_dir, sessions_dir;
  std::string model, endpoint;
  std::optional<double> temperature;
  double timeout = 60;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--backend", backend, "live, replay or record");
    cmd->add_option("--data", data_dir, "dataset directory");
    cmd->add_option("--charts", charts_dir, "chart spec directory");
    cmd->add_option("--fixtures", fixture_dir, "fixture directory");
    cmd->add_option("--sessions", sessions_dir, "session directory");
    cmd->add_option("--model", model, "model name");
    cmd->add_option("--endpoint", endpoint, "chat completions URL");
    cmd->add_option("--temperature", temperature, "sampling temperature");
    cmd->add_option("--timeout", timeout, "provider timeout in seconds");
  }

  AppConfig config() const {
    AppConfig c;
    if (!config_path.empty()) {
      c = load_app_config(config_path);
    } else {
      c.api_key = env_api_key();
    }
    if (!backend.empty()) c.backend = backend_mode_from_string(backend);
    if (!data_dir.empty()) c.data_dir = data_dir;
    if (!charts_dir.empty()) c.charts_dir = charts_dir;
    if (!fixture_dir.empty()) c.fixture_dir = fixture_dir;
    if (!sessions_dir.empty()) c.sessions_dir = sessions_dir;
    if (!model.empty()) c.model = model;
    if (!endpoint.empty()) c.endpoint = endpoint;
    if (temperature) c.temperature = *temperature;
    c.validate();
    return c;
  }

  std::unique_ptr<App> app() const {
    auto c = config();
    auto catalog = Catalog::load(c.data_dir, c.charts_dir);
    return std::make_unique<App>(std::move(c), std::move(catalog), std::make_shared<HttplibTransport>(timeout));
  }
};

std::vector<Annotation> read_annotations(const std::string& path) {
  if (path.empty()) return {};
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path + ": " + e.what());
  }
  if (!j.is_array()) throw Error(ErrorCode::FormatError, path + ": expected an array of annotations");
  std::vector<Annotation> out;
  for (const auto& a : j) out.push_back(annotation_from_json(a));
  return out;
}

std::vector<Annotation> canonical_annotations(const App& app, const ChartSpec& spec, const std::string& path) {
  const Dataset& ds = app.catalog().dataset_for(spec);
  std::vector<Annotation> anns;
  for (const auto& a : read_annotations(path)) {
    (void)annotation_to_predicate(a);
    if (auto v = validate_annotation(a, spec, ds); !v.empty()) throw Error(ErrorCode::InvalidAnnotation, v.front());
    anns.push_back(canonicalize_annotation(a, spec, ds));
  }
  return anns;
}

// Narrative text from --text, a story file written by `generate`, or a
// plain text file.
std::string narrative_input(const std::string& text, const std::string& story_file) {
  if (story_file.empty()) return text;
  const std::string content = read_file(story_file);
  const json j = json::parse(content, nullptr, false);
  if (j.is_object() && j.contains("text") && j["text"].is_string()) return j["text"].get<std::string>();
  return content;
}

void emit(const json& j, const std::string& out) {
  const std::string s = j.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << s;
  } else {
    write_file_atomic(out, s);
  }
}

struct PromptFlags {
  bool allow_names = false;
  bool comparing = false;
  void add_to(CLI::App* cmd) {
    cmd->add_flag("--allow-names", allow_names, "omit the no-people-names directive");
    cmd->add_flag("--comparing", comparing, "phrase the annotation clause as a comparison");
  }
  PromptOptions options() const {
    PromptOptions o;
    o.include_no_names_directive = !allow_names;
    if (comparing) o.focus_verb = FocusVerb::comparing;
    return o;
  }
};

/// Each step names a chart and optionally annotations, temperature and
/// prompt options. Steps with both "narrative" and "title" are stored as
/// given; the rest go through the configured backend, which must be
/// "record" for anything to be written.
std::vector<std::filesystem::path> run_fixture_script(App& app, const std::filesystem::path& path) {
  json script;
  try {
    script = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  const json steps = script.is_object() ? script.value("steps", json::array()) : script;
  if (!steps.is_array()) throw Error(ErrorCode::FormatError, path.string() + ": expected a list of steps");
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  const FixtureStore store(app.config().fixture_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& step : steps) {
    const ChartSpec& spec = app.catalog().chart(step.at("chart").get<std::string>());
    const Dataset& ds = app.catalog().dataset_for(spec);
    std::vector<Annotation> anns;
    if (step.contains("annotations")) {
      const json& a = step["annotations"];
      if (a.is_string()) {
        const std::filesystem::path file = a.get<std::string>();
        anns = canonical_annotations(app, spec, (file.is_absolute() ? file : base / file).string());
      } else {
        for (const auto& one : a) {
          auto ann = annotation_from_json(one);
          if (auto v = validate_annotation(ann, spec, ds); !v.empty()) throw Error(ErrorCode::InvalidAnnotation, v.front());
          anns.push_back(canonicalize_annotation(ann, spec, ds));
        }
      }
    }
    std::optional<double> temperature;
    if (step.contains("temperature")) temperature = step["temperature"].get<double>();
    const auto params = app.params_for(temperature);
    const auto opts = step.contains("options") ? step["options"].get<PromptOptions>() : PromptOptions{};
    const auto prompt = compose_narrative_prompt(spec, ds, anns, opts);
    GenerationParams title_params = params;
    title_params.max_tokens = kTitleMaxTokens;
    if (step.contains("narrative") && step.contains("title")) {
      const auto narrative = step["narrative"].get<std::string>();
      written.push_back(store.path_for(store.put(prompt.text, params, narrative).key));
      const auto title_prompt = compose_title_prompt(strip_whitespace(narrative)).text;
      written.push_back(store.path_for(store.put(title_prompt, title_params, step["title"].get<std::string>()).key));
    } else {
      const Story story = generate_story(spec, ds, anns, params, opts, app.gateway(), app.config().rel_tol);
      written.push_back(store.path_for(fixture_key(prompt.text, params)));
      written.push_back(store.path_for(fixture_key(story.title_prompt.text, title_params)));
    }
  }
  return written;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Narratives from charts and annotations"};
  cli.require_subcommand(1);

  Common common;
  PromptFlags prompt_flags;
  std::string chart_id, annotations_path, out, text, text_file;

  auto* generate = cli.add_subcommand("generate", "generate, link and verify one story");
  common.add_to(generate);
  prompt_flags.add_to(generate);
  generate->add_option("--chart", chart_id, "chart id")->required();
  generate->add_option("--annotations", annotations_path, "JSON array of annotations");
  generate->add_option("--out", out, "write the story JSON here instead of stdout");

  auto* prompt = cli.add_subcommand("prompt", "print the narrative prompt without calling a model");
  common.add_to(prompt);
  prompt_flags.add_to(prompt);
  prompt->add_option("--chart", chart_id, "chart id")->required();
  prompt->add_option("--annotations", annotations_path, "JSON array of annotations");

  auto* link = cli.add_subcommand("link", "link a narrative to a chart's data");
  common.add_to(link);
  link->add_option("--chart", chart_id, "chart id")->required();
  link->add_option("--text", text, "narrative text");
  link->add_option("--story", text_file, "story JSON from generate, or a plain text file");

  auto* verify = cli.add_subcommand("verify", "check the numbers in a narrative against a chart's data");
  common.add_to(verify);
  verify->add_option("--chart", chart_id, "chart id")->required();
  verify->add_option("--text", text, "narrative text");
  verify->add_option("--story", text_file, "story JSON from generate, or a plain text file");

  auto* record = cli.add_subcommand("record-fixtures", "run a fixture script against the configured backend");
  common.add_to(record);
  std::string script_path;
  record->add_option("--script", script_path, "JSON fixture script")->required();

  auto* serve_cmd = cli.add_subcommand("serve", "run the HTTP API");
  common.add_to(serve_cmd);
  std::string host;
  int port = -1;
  serve_cmd->add_option("--host", host, "bind address");
  serve_cmd->add_option("--port", port, "bind port, 0 for any");

  CLI11_PARSE(cli, argc, argv);

  try {
    if (generate->parsed()) {
      auto app = common.app();
      const ChartSpec& spec = app->catalog().chart(chart_id);
      const auto anns = run_stage("compose", [&] { return canonical_annotations(*app, spec, annotations_path); });
      const auto params = app->params_for(common.temperature);
      const Story story = generate_story(spec, app->catalog().dataset_for(spec), anns, params, prompt_flags.options(),
                                         app->gateway(), app->config().rel_tol);
      emit(json(story), out);
    } else if (prompt->parsed()) {
      auto app = common.app();
      const ChartSpec& spec = app->catalog().chart(chart_id);
      const auto anns = canonical_annotations(*app, spec, annotations_path);
      std::cout << compose_narrative_prompt(spec, app->catalog().dataset_for(spec), anns, prompt_flags.options()).text
                << "\n";
    } else if (link->parsed() || verify->parsed()) {
      auto app = common.app();
      const ChartSpec& spec = app->catalog().chart(chart_id);
      const Dataset& ds = app->catalog().dataset_for(spec);
      const auto linked = link_story(narrative_input(text, text_file), ds, spec);
      if (link->parsed()) {
        emit(json(linked), "");
      } else {
        const auto flags = verify_story(linked, ds, app->config().rel_tol);
        emit(json(flags), "");
        for (const auto& f : flags)
          if (f.status == VerificationStatus::unverified) return 3;
      }
    } else if (record->parsed()) {
      auto app = common.app();
      for (const auto& path : run_fixture_script(*app, script_path)) std::cout << path.string() << "\n";
    } else if (serve_cmd->parsed()) {
      auto config = common.config();
      if (!host.empty()) config.host = host;
      if (port >= 0) config.port = port;
      auto catalog = Catalog::load(config.data_dir, config.charts_dir);
      App app(std::move(config), std::move(catalog), std::make_shared<HttplibTransport>(common.timeout));
      std::cerr << "listening on " << app.config().host << ":" << app.config().port << "\n";
      serve(app);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << error_body(e).dump() << "\n";
    return 2;
  }
  return 0;
}
