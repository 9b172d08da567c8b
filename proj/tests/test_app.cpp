#include <gtest/gtest.h>

#include <fstream>

#include "app_support.hpp"

using namespace datatales;
using datatales::testing::ForbiddenTransport;
using datatales::testing::seed_generation;
using datatales::testing::TempDir;

namespace {

const Annotation kAustralia2000 = MarkSelection{{{{"Year", 2000.0}, {"Country", std::string("Australia")}}}};
const std::string kMarkJson =
    R"({"variant": "mark_selection", "records": [{"Year": 2000, "Country": "Australia"}]})";

class AppTest : public ::testing::Test {
 protected:
  void SetUp() override {
    transport_ = std::make_shared<ForbiddenTransport>();
    app_ = std::make_unique<App>(datatales::testing::replay_config(dir_), datatales::testing::test_catalog(), transport_);
  }
  void TearDown() override { EXPECT_EQ(transport_->calls, 0); }

  GenerationParams params(double t = kDefaultTemperature) const { return app_->params_for(t); }
  FixtureStore fixtures() const { return FixtureStore(app_->config().fixture_dir); }

  ApiResponse call(const std::string& method, const std::string& path, const json& body = json()) {
    return app_->handle(method, path, body.is_null() ? "" : body.dump());
  }

  std::string new_session(const std::string& chart = "medals") {
    auto r = call("POST", "/sessions", {{"chart_id", chart}});
    EXPECT_EQ(r.status, 201) << r.body.dump();
    return r.body["id"].get<std::string>();
  }

  TempDir dir_;
  std::shared_ptr<ForbiddenTransport> transport_;
  std::unique_ptr<App> app_;
};

}  // namespace

TEST_F(AppTest, ListsDatasetsAndCharts) {
  auto ds = call("GET", "/datasets");
  EXPECT_EQ(ds.status, 200);
  EXPECT_EQ(ds.body.size(), 2u);
  auto charts = call("GET", "/charts");
  ASSERT_EQ(charts.status, 200);
  ASSERT_EQ(charts.body.size(), 2u);
  EXPECT_EQ(charts.body[0]["id"], "medals");
  auto one = call("GET", "/charts/medals");
  ASSERT_EQ(one.status, 200);
  EXPECT_EQ(one.body["rows"].size(), 2u);
  EXPECT_EQ(one.body["spec"]["encodings"]["color"], "Country");
  EXPECT_EQ(call("GET", "/charts/nope").status, 404);
  EXPECT_EQ(call("GET", "/elsewhere").status, 404);
}

TEST_F(AppTest, CreateSessionForUnknownChartIs404) {
  auto r = call("POST", "/sessions", {{"chart_id", "nope"}});
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(r.body["error"], "UnknownChart");
  EXPECT_EQ(call("POST", "/sessions", json::object()).status, 400);
  EXPECT_EQ(app_->handle("POST", "/sessions", "{broken").status, 400);
}

TEST_F(AppTest, NewSessionIsEmpty) {
  const auto id = new_session();
  auto r = call("GET", "/sessions/" + id);
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["chart_id"], "medals");
  EXPECT_TRUE(r.body["stories"].empty());
  EXPECT_EQ(r.body["version"], kSessionFormatVersion);
  EXPECT_EQ(call("GET", "/sessions/nope").status, 404);
}

TEST_F(AppTest, FullFlowInReplayMode) {
  seed_generation(fixtures(), app_->catalog(), "medals", {kAustralia2000}, params(),
                  "  In 2000, Australia won 58 medals. The USA won 93.\n", "\"Australia's Golden Year\"");
  const auto id = new_session();
  auto ann = call("PUT", "/sessions/" + id + "/annotations", json::array({json::parse(kMarkJson)}));
  ASSERT_EQ(ann.status, 200) << ann.body.dump();
  EXPECT_EQ(ann.body["annotations"].size(), 1u);

  auto gen = call("POST", "/sessions/" + id + "/generate", json::object());
  ASSERT_EQ(gen.status, 201) << gen.body.dump();
  EXPECT_EQ(gen.body["id"], "story-1");
  EXPECT_EQ(gen.body["text"], "In 2000, Australia won 58 medals. The USA won 93.");
  EXPECT_EQ(gen.body["title"], "Australia's Golden Year");
  EXPECT_EQ(gen.body["raw_narrative"], "  In 2000, Australia won 58 medals. The USA won 93.\n");
  EXPECT_NE(gen.body["narrative_prompt"]["text"].get<std::string>().find("focusing on: (1) {Year: 2000, Country: Australia}"),
            std::string::npos);
  for (const auto& f : gen.body["flags"]) EXPECT_EQ(f["status"], "verified") << f.dump();

  auto links = call("GET", "/sessions/" + id + "/stories/story-1/links");
  ASSERT_EQ(links.status, 200);
  const auto& sentences = links.body["linked"]["sentences"];
  ASSERT_EQ(sentences.size(), 2u);
  EXPECT_EQ(sentences[0]["highlight_rows"], json::array({0, 1}));  // Year 2000 or Australia
  EXPECT_EQ(sentences[1]["highlight_rows"], json::array({1}));

  auto listed = call("GET", "/sessions/" + id + "/stories");
  ASSERT_EQ(listed.status, 200);
  EXPECT_EQ(listed.body.size(), 1u);
  EXPECT_EQ(call("GET", "/sessions/" + id + "/stories/story-1").body["id"], "story-1");
  EXPECT_EQ(call("GET", "/sessions/" + id + "/stories/story-9").status, 404);

  auto e = call("POST", "/sessions/" + id + "/stories/story-1/edits", {{"start", 23}, {"end", 25}, {"replacement", "60"}});
  ASSERT_EQ(e.status, 200) << e.body.dump();
  EXPECT_EQ(e.body["text"], "In 2000, Australia won 60 medals. The USA won 93.");
  EXPECT_EQ(e.body["spans"].size(), 3u);
  EXPECT_EQ(e.body["flags"][1]["status"], "unverified");

  // Persisted state survives a restart.
  app_.reset();
  app_ = std::make_unique<App>(datatales::testing::replay_config(dir_), datatales::testing::test_catalog(), transport_);
  auto reloaded = call("GET", "/sessions/" + id);
  ASSERT_EQ(reloaded.status, 200);
  EXPECT_EQ(reloaded.body["stories"][0]["text"], "In 2000, Australia won 60 medals. The USA won 93.");
}

TEST_F(AppTest, EditOutOfRangeIsRangeOutOfBounds) {
  seed_generation(fixtures(), app_->catalog(), "medals", {}, params(), "Short.", "T");
  const auto id = new_session();
  ASSERT_EQ(call("POST", "/sessions/" + id + "/generate").status, 201);
  for (const auto& body : {json{{"start", 2}, {"end", 99}, {"replacement", "x"}},
                           json{{"start", -1}, {"end", 2}, {"replacement", "x"}},
                           json{{"start", 4}, {"end", 2}, {"replacement", "x"}}}) {
    auto r = call("POST", "/sessions/" + id + "/stories/story-1/edits", body);
    EXPECT_EQ(r.status, 400);
    EXPECT_EQ(r.body["error"], "RangeOutOfBounds");
  }
  EXPECT_EQ(call("POST", "/sessions/" + id + "/stories/story-1/edits", {{"start", 0}, {"end", 1}}).status, 400);
  EXPECT_EQ(call("GET", "/sessions/" + id).body["stories"][0]["text"], "Short.");
}

TEST_F(AppTest, TemperatureSelectsDifferentFixtures) {
  seed_generation(fixtures(), app_->catalog(), "medals", {}, params(0.2), "Cool story.", "Cool");
  seed_generation(fixtures(), app_->catalog(), "medals", {}, params(0.9), "Wild story.", "Wild");
  const auto id = new_session();
  auto a = call("POST", "/sessions/" + id + "/generate", {{"temperature", 0.2}});
  auto b = call("POST", "/sessions/" + id + "/generate", {{"temperature", 0.9}});
  ASSERT_EQ(a.status, 201);
  ASSERT_EQ(b.status, 201);
  EXPECT_EQ(a.body["text"], "Cool story.");
  EXPECT_EQ(b.body["text"], "Wild story.");
  EXPECT_EQ(b.body["id"], "story-2");
  EXPECT_NE(fixture_key(a.body["narrative_prompt"]["text"].get<std::string>(), params(0.2)),
            fixture_key(b.body["narrative_prompt"]["text"].get<std::string>(), params(0.9)));
  EXPECT_EQ(call("POST", "/sessions/" + id + "/generate", {{"temperature", 5}}).status, 400);
}

TEST_F(AppTest, FailuresNameTheirStage) {
  const auto id = new_session();
  auto miss = call("POST", "/sessions/" + id + "/generate");
  EXPECT_EQ(miss.status, 502);
  EXPECT_EQ(miss.body["error"], "FixtureMiss");
  EXPECT_EQ(miss.body["stage"], "complete");

  // Narrative recorded, title not.
  const auto& spec = app_->catalog().chart("medals");
  fixtures().put(compose_narrative_prompt(spec, app_->catalog().dataset_for(spec), {}).text, params(), "Text.");
  auto title = call("POST", "/sessions/" + id + "/generate");
  EXPECT_EQ(title.status, 502);
  EXPECT_EQ(title.body["stage"], "title");

  auto unknown = call("POST", "/sessions/session-9999/generate");
  EXPECT_EQ(unknown.status, 404);
  EXPECT_EQ(unknown.body["stage"], "compose");

  auto big = call("POST", "/sessions/" + id + "/generate", {{"options", {{"data_char_budget", 10}}}});
  EXPECT_EQ(big.status, 413);
  EXPECT_EQ(big.body["error"], "DataTooLarge");
  EXPECT_EQ(big.body["stage"], "compose");
  // No partial story was stored.
  EXPECT_TRUE(call("GET", "/sessions/" + id).body["stories"].empty());
}

TEST_F(AppTest, InvalidAnnotationsAreRejected) {
  const auto id = new_session();
  auto wrong_field = call("PUT", "/sessions/" + id + "/annotations",
                          json::array({{{"variant", "axis_range"}, {"field", "Country"}, {"range", {0, 1}}}}));
  EXPECT_EQ(wrong_field.status, 400);
  EXPECT_EQ(wrong_field.body["error"], "InvalidAnnotation");
  auto empty = call("PUT", "/sessions/" + id + "/annotations",
                    json{{"annotations", json::array({{{"variant", "legend_selection"}, {"field", "Country"}, {"values", json::array()}}})}});
  EXPECT_EQ(empty.status, 400);
  EXPECT_EQ(empty.body["error"], "EmptyAnnotation");
  auto unknown_variant = call("PUT", "/sessions/" + id + "/annotations", json::array({{{"variant", "lasso"}}}));
  EXPECT_EQ(unknown_variant.status, 400);
  EXPECT_TRUE(call("GET", "/sessions/" + id).body["annotations"].empty());
}

TEST_F(AppTest, DraftRoutes) {
  seed_generation(fixtures(), app_->catalog(), "medals", {}, params(), "Australia won 58 medals.", "T");
  const auto id = new_session();
  ASSERT_EQ(call("POST", "/sessions/" + id + "/generate").status, 201);
  auto d = call("PUT", "/sessions/" + id + "/draft", {{"text", "Intro: "}});
  ASSERT_EQ(d.status, 200);
  auto seg = call("POST", "/sessions/" + id + "/draft/segments", {{"story_id", "story-1"}, {"start", 0}, {"end", 9}, {"at", 7}});
  ASSERT_EQ(seg.status, 200) << seg.body.dump();
  EXPECT_EQ(seg.body["master_draft"], "Intro: Australia");
  EXPECT_EQ(seg.body["draft_segments"].size(), 1u);
  EXPECT_EQ(call("PUT", "/sessions/" + id + "/draft", json::object()).status, 400);
}

TEST(AppConfig, LoadResolvesRelativeDirectories) {
  TempDir dir;
  std::ofstream(dir / "config.json") << R"({"backend": "replay", "fixtures": "fx", "data": "/abs/data", "port": 9000, "temperature": 0.3})";
  auto c = load_app_config(dir / "config.json");
  EXPECT_EQ(c.backend, BackendMode::replay);
  EXPECT_EQ(c.fixture_dir, dir / "fx");
  EXPECT_EQ(c.data_dir, std::filesystem::path("/abs/data"));
  EXPECT_EQ(c.port, 9000);
  EXPECT_DOUBLE_EQ(c.temperature, 0.3);
  EXPECT_NO_THROW(c.validate());
  c.backend = BackendMode::live;
  c.api_key.clear();
  EXPECT_THROW(c.validate(), Error);
}

TEST(CleanTitle, StripsQuotesAndSpace) {
  EXPECT_EQ(clean_title("  \"Golden Year\" \n"), "Golden Year");
  EXPECT_EQ(clean_title("Plain"), "Plain");
  EXPECT_EQ(clean_title("\""), "\"");
}

TEST(HttpStatus, Mapping) {
  EXPECT_EQ(http_status_for(ErrorCode::UnknownSession), 404);
  EXPECT_EQ(http_status_for(ErrorCode::DuplicateId), 409);
  EXPECT_EQ(http_status_for(ErrorCode::DataTooLarge), 413);
  EXPECT_EQ(http_status_for(ErrorCode::ProviderError), 502);
  EXPECT_EQ(http_status_for(ErrorCode::VersionError), 500);
  EXPECT_EQ(http_status_for(ErrorCode::RangeOutOfBounds), 400);
}
