// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Everything runs offline.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "app_support.hpp"

using namespace datatales;
namespace dt = datatales::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Small failure log that keeps the first few messages.
class Checker {
 public:
  void fail(const std::string& why) {
    ++failures_;
    if (messages_.size() < 3) messages_.push_back(why);
  }
  void expect(bool ok, const std::string& why) {
    if (!ok) fail(why);
  }
  Outcome outcome(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    std::string out = std::to_string(failures_) + " failure(s)";
    for (const auto& m : messages_) out += "; " + m;
    return {false, out};
  }

 private:
  std::size_t failures_ = 0;
  std::vector<std::string> messages_;
};

const Catalog& test_catalog() {
  static const Catalog c = dt::test_catalog();
  return c;
}

Annotation australia_2000() { return MarkSelection{{{{"Year", 2000.0}, {"Country", std::string("Australia")}}}}; }

// ---------------------------------------------------------------------------

Outcome prompt_fidelity() {
  Checker c;
  const auto& spec = test_catalog().chart("medals");
  const auto& ds = test_catalog().dataset_for(spec);
  const auto golden = read_file(dt::golden_dir() / "medals_mark_annotation.txt");
  const auto with = compose_narrative_prompt(spec, ds, {australia_2000()}).text;
  c.expect(with == golden, "mark-annotation prompt differs from golden file");
  c.expect(with.find(" focusing on: (1) {Year: 2000, Country: Australia}") != std::string::npos,
           "focus clause missing");
  const auto without = compose_narrative_prompt(spec, ds, {}).text;
  c.expect(without == read_file(dt::golden_dir() / "medals_no_annotations.txt"), "plain prompt differs from golden file");
  c.expect(without.find("focusing on") == std::string::npos, "focus clause present without annotations");
  PromptOptions no_directive;
  no_directive.include_no_names_directive = false;
  c.expect(compose_narrative_prompt(spec, ds, {australia_2000()}, no_directive).text ==
               read_file(dt::golden_dir() / "medals_mark_no_directive.txt"),
           "directive-free prompt differs from golden file");
  return c.outcome("3 golden prompts byte-identical");
}

Outcome title_prompt_fidelity() {
  Checker c;
  for (const std::string narrative :
       {"Australia shone in 2000.", "He said \"go\".\nThen stopped.", "  padded  ", "Unicode caf\xc3\xa9 story."}) {
    c.expect(compose_title_prompt(narrative).text == "Suggest a title for the following narrative: " + narrative,
             "title prompt mismatch for: " + narrative);
  }
  c.expect(compose_title_prompt("Australia shone in 2000.").text == read_file(dt::golden_dir() / "title_australia.txt"),
           "title prompt differs from golden file");
  return c.outcome("5 exact matches");
}

// Replaces every story timestamp so runs can be compared byte for byte.
std::string normalized_session_file(const std::filesystem::path& path) {
  auto j = json::parse(read_file(path));
  for (auto& story : j["stories"]) story["created_at"] = "<timestamp>";
  return j.dump(2);
}

std::string run_replay_script(const std::filesystem::path& fixtures, std::string& error) {
  dt::TempDir dir;
  AppConfig config = dt::replay_config(dir);
  config.fixture_dir = fixtures;
  auto forbidden = std::make_shared<dt::ForbiddenTransport>();
  App app(config, dt::test_catalog(), forbidden);
  auto call = [&](const std::string& method, const std::string& path, const json& body, int want) {
    auto r = app.handle(method, path, body.dump());
    if (r.status != want && error.empty()) error = method + " " + path + " -> " + std::to_string(r.status) + " " + r.body.dump();
    return r.body;
  };
  const auto id = call("POST", "/sessions", {{"chart_id", "medals"}}, 201).value("id", std::string{});
  call("PUT", "/sessions/" + id + "/annotations",
       json::array({{{"variant", "mark_selection"}, {"records", json::array({{{"Year", 2000}, {"Country", "Australia"}}})}}}),
       200);
  for (double t : {0.2, 0.7, 0.9}) call("POST", "/sessions/" + id + "/generate", {{"temperature", t}}, 201);
  call("POST", "/sessions/" + id + "/stories/story-1/edits", {{"start", 0}, {"end", 2}, {"replacement", "Back in"}}, 200);
  call("POST", "/sessions/" + id + "/stories/story-3/edits", {{"start", 5}, {"end", 5}, {"replacement", " really"}}, 200);
  if (forbidden->calls != 0 && error.empty()) error = "network access attempted";
  return normalized_session_file(app.store().path_for(id));
}

Outcome replay_determinism() {
  Checker c;
  dt::TempDir fixtures;
  const FixtureStore store(fixtures.path());
  AppConfig cfg;
  const std::vector<std::pair<double, std::string>> scripted{
      {0.2, "In 2000, Australia won 58 medals while the USA won 93."},
      {0.7, "Australia collected 58 medals in 2000."},
      {0.9, "The USA led with 93 medals, ahead of Australia on 58."}};
  for (const auto& [t, text] : scripted)
    dt::seed_generation(store, test_catalog(), "medals", {australia_2000()}, GenerationParams{cfg.model, t, cfg.max_tokens},
                        text, "\"Medal Story\"");
  std::string err1, err2;
  const auto first = run_replay_script(fixtures.path(), err1);
  const auto second = run_replay_script(fixtures.path(), err2);
  c.expect(err1.empty(), "run 1: " + err1);
  c.expect(err2.empty(), "run 2: " + err2);
  c.expect(first == second, "normalized session files differ");
  c.expect(json::parse(first)["stories"].size() == 3, "expected 3 stories");
  return c.outcome("2 runs, " + std::to_string(first.size()) + "-byte session files identical");
}

Outcome linker_oracle_equivalence() {
  Checker c;
  std::mt19937 rng(1000);
  std::size_t sentences = 0, hits = 0;
  while (sentences < 1000) {
    auto lc = dt::random_linker_case(rng, 5);
    const auto linked = link_story(lc.text, lc.ds, lc.spec);
    sentences += linked.sentences.size();
    std::vector<dt::ScanHit> got;
    for (const auto& [idx, refs] : linked.references)
      for (const auto& r : refs)
        if (r.match_kind == MatchKind::value_exact || r.match_kind == MatchKind::value_normalized)
          got.push_back({linked.sentences[idx].start + r.start, linked.sentences[idx].start + r.end, r.field,
                         std::get<std::string>(r.value)});
    std::sort(got.begin(), got.end());
    const auto want = dt::whole_token_scan(lc.text, lc.ds);
    hits += want.size();
    for (const auto& h : got)
      c.expect(std::binary_search(want.begin(), want.end(), h), "linker-only match at " + std::to_string(h.start) + " in: " + lc.text);
    for (const auto& h : want)
      c.expect(std::binary_search(got.begin(), got.end(), h), "missed '" + h.value + "' in: " + lc.text);
  }
  return c.outcome(std::to_string(sentences) + " sentences, " + std::to_string(hits) + " value occurrences, 100% agreement");
}

Outcome two_state_comparison() {
  Checker c;
  const auto ds = load_dataset(dt::source_dir() / "data" / "state_population.csv", "state_population");
  const ChartSpec spec{"states_over80", ChartType::choropleth, "", {{Channel::geo, "State"}, {Channel::color, "Over80"}},
                       "state_population"};
  const auto col = *ds.field_index("State");
  std::vector<std::string> states;
  for (const auto& row : ds.rows()) states.push_back(std::get<std::string>(row[col]));
  std::size_t pairs = 0;
  for (const auto& x : states)
    for (const auto& y : states) {
      if (x == y) continue;
      ++pairs;
      const auto linked =
          link_story(x + " has a higher number of people over the age of 80 compared to " + y, ds, spec);
      if (!linked.underlined(0)) {
        c.fail("no references for " + x + "/" + y);
        continue;
      }
      const auto& refs = linked.references.at(0);
      std::set<std::string> named;
      for (const auto& r : refs)
        if (r.field == "State") named.insert(std::get<std::string>(r.value));
      c.expect(refs.size() == 2 && named == std::set<std::string>{x, y}, "expected exactly " + x + " and " + y);
      std::vector<std::size_t> brute;
      for (std::size_t r = 0; r < ds.row_count(); ++r)
        if (states[r] == x || states[r] == y) brute.push_back(r);
      c.expect(resolve_predicate(linked.highlight.at(0), ds) == brute, "highlight rows differ for " + x + "/" + y);
    }
  return c.outcome(std::to_string(pairs) + " ordered state pairs, 2 references and 2 rows each");
}

Outcome verifier_fuzz() {
  Checker c;
  std::mt19937 rng(60);
  std::uniform_int_distribution<int> sentences_dist(1, 4), form(0, 2), sign(0, 1);
  std::uniform_real_distribution<double> small(10, 99999), perturb(0.006, 0.5);
  const ChartSpec spec{"verify", ChartType::bar, "", {{Channel::x, "Name"}, {Channel::y, "Amount"}}, "verify"};
  for (int story = 0; story < 1000; ++story) {
    // One row per name; amounts are exact at two decimals, totals are whole
    // multiples of ten thousand.
    const int n = sentences_dist(rng);
    std::vector<std::vector<Value>> rows;
    std::vector<std::string> names;
    std::set<std::string> used;
    for (int i = 0; i < n; ++i) {
      std::string name;
      do name = dt::random_letters(rng, 'a', 'z', 5, 9);
      while (!used.insert(name).second);
      name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
      names.push_back(name);
      rows.push_back({Value{name}, Value{std::round(small(rng) * 100) / 100},
                      Value{std::round(small(rng) * 10) * 10000.0}});
    }
    const Dataset ds("verify", {{"Name", FieldKind::categorical, 2}, {"Amount", FieldKind::quantitative, 2},
                                {"Total", FieldKind::quantitative, 0}},
                     rows);
    auto render = [&](double amount, double total, int f) {
      if (f == 0) return format_number(amount, 2);
      if (f == 1) return with_thousands_separators(format_number(amount, 2));
      return format_number(total / 1e6, 2) + " million";
    };
    std::vector<int> forms;
    std::vector<double> truth;
    std::string text;
    for (int i = 0; i < n; ++i) {
      forms.push_back(form(rng));
      const double amount = std::get<double>(rows[i][1]), total = std::get<double>(rows[i][2]);
      truth.push_back(forms[i] == 2 ? total : amount);
      text += (i ? " " : "") + names[i] + " recorded " + render(amount, total, forms[i]) + " this period.";
    }
    const auto flags = verify_story(link_story(text, ds, spec), ds);
    if (flags.size() != static_cast<std::size_t>(n)) {
      c.fail("expected " + std::to_string(n) + " mentions in: " + text);
      continue;
    }
    for (const auto& f : flags) c.expect(f.status == VerificationStatus::verified, "unverified '" + f.mention.raw + "' in: " + text);

    // Perturb one mention beyond tolerance; it alone must be flagged.
    const int target = std::uniform_int_distribution<int>(0, n - 1)(rng);
    const double factor = 1 + (sign(rng) ? 1 : -1) * perturb(rng);
    const double other = forms[target] == 2 ? std::get<double>(rows[target][1]) : std::get<double>(rows[target][2]);
    const double moved = truth[target] * factor;
    if (within_tolerance(moved, other, kDefaultRelTolerance)) continue;  // lands on the row's other field
    std::string perturbed_text;
    for (int i = 0; i < n; ++i) {
      const double amount = std::get<double>(rows[i][1]), total = std::get<double>(rows[i][2]);
      std::string rendered = render(amount, total, forms[i]);
      if (i == target)
        rendered = forms[i] == 2 ? format_number(moved / 1e6, 6) + " million" : format_number(moved, 2);
      perturbed_text += (i ? " " : "") + names[i] + " recorded " + rendered + " this period.";
    }
    const auto after = verify_story(link_story(perturbed_text, ds, spec), ds);
    if (after.size() != static_cast<std::size_t>(n)) {
      c.fail("mention count changed in: " + perturbed_text);
      continue;
    }
    for (int i = 0; i < n; ++i) {
      const bool want_verified = i != target;
      c.expect((after[i].status == VerificationStatus::verified) == want_verified,
               "wrong flag for '" + after[i].mention.raw + "' in: " + perturbed_text);
    }
  }
  return c.outcome("1000 stories verified, single perturbed mention flagged (rel_tol 0.005, shifts 0.6%-50%)");
}

Story base_story(const Dataset& ds, const ChartSpec& spec, const std::string& id, const std::string& text) {
  Story s;
  s.id = id;
  s.title = "Title";
  s.text = text;
  s.raw_narrative = text;
  s.raw_title = "Title";
  s.spans = generated_spans(text.size());
  s.narrative_prompt = compose_narrative_prompt(spec, ds, {});
  s.title_prompt = compose_title_prompt(text, spec.id);
  s.params = GenerationParams{"gpt-3.5-turbo", 0.7, 1024};
  s.linked = link_story(text, ds, spec);
  s.flags = verify_story(s.linked, ds);
  s.created_at = utc_timestamp();
  return s;
}

Outcome edit_span_fuzz() {
  Checker c;
  const auto& spec = test_catalog().chart("medals");
  const auto& ds = test_catalog().dataset_for(spec);
  std::mt19937 rng(7000);
  int edits = 0;
  while (edits < 1000) {
    Story s = base_story(ds, spec, "story-1", "In 2000, Australia won 58 medals while the USA won 93.");
    std::vector<Source> labels(s.text.size(), Source::generated);
    for (int step = 0; step < 25; ++step, ++edits) {
      std::uniform_int_distribution<std::size_t> pos(0, s.text.size());
      std::size_t a = pos(rng), b = pos(rng);
      if (a > b) std::swap(a, b);
      const std::string insert = dt::random_word(rng, 0, 6);
      s = apply_edit(s, a, b, insert, ds, spec);
      if (!(a == b && insert.empty())) {
        labels.erase(labels.begin() + a, labels.begin() + b);
        labels.insert(labels.begin() + a, insert.size(), Source::author);
      }
      if (auto v = span_violation(s.spans, s.text.size())) c.fail(*v);
      for (const auto& span : s.spans)
        for (std::size_t p = span.start; p < span.end; ++p)
          if (span.source != labels[p]) {
            c.fail("byte " + std::to_string(p) + " has the wrong source");
            break;
          }
      for (std::size_t p = a; p < a + insert.size(); ++p) {
        const bool in_author = std::any_of(s.spans.begin(), s.spans.end(), [&](const ProvenanceSpan& sp) {
          return sp.source == Source::author && sp.start <= p && p < sp.end;
        });
        if (!in_author) {
          c.fail("inserted byte outside author spans");
          break;
        }
      }
      c.expect(s.linked.text == s.text, "linkage not refreshed");
    }
  }
  return c.outcome(std::to_string(edits) + " edits, spans tile the text and match a per-byte oracle");
}

Outcome predicate_resolution() {
  Checker c;
  std::mt19937 rng(8000);
  for (int i = 0; i < 1000; ++i) {
    const auto ds = dt::random_table(rng);
    const auto pred = dt::random_predicate(rng);
    c.expect(resolve_predicate(pred, ds) == dt::brute_force_filter(pred, ds), "pair " + std::to_string(i) + " differs");
  }
  return c.outcome("1000 (table, predicate) pairs match brute force");
}

Session random_session(std::mt19937& rng, int i, const Dataset& ds, const ChartSpec& spec) {
  std::uniform_int_distribution<int> stories(0, 3), edits(0, 5), anns(0, 3), kind(0, 3);
  Session s;
  char id[32];
  std::snprintf(id, sizeof id, "session-%04d", i);
  s.id = id;
  s.chart_id = spec.id;
  for (int a = anns(rng); a > 0; --a) {
    switch (kind(rng)) {
      case 0: s.annotations.push_back(australia_2000()); break;
      case 1: s.annotations.push_back(AxisRange{"Year", 1990.5, 2000.0 + a}); break;
      case 2: s.annotations.push_back(LegendSelection{"Country", {std::string("USA")}, std::nullopt}); break;
      default: s.annotations.push_back(LegendSelection{"Medals", {}, std::make_pair(10.25, 93.0)});
    }
  }
  static const char* kTexts[] = {"In 2000, Australia won 58 medals.", "The USA won 93 medals, about 1.5 times more.",
                                 "Nothing numeric here.", "Ünïcödé text: Australia \xe2\x80\x94 58!"};
  const int n = stories(rng);
  for (int k = 1; k <= n; ++k) {
    auto story = base_story(ds, spec, "story-" + std::to_string(k), kTexts[(i + k) % std::size(kTexts)]);
    for (int e = edits(rng); e > 0; --e) {
      std::uniform_int_distribution<std::size_t> pos(0, story.text.size());
      // Edits land between characters, never inside one.
      auto snap = [&](std::size_t p) {
        while (!is_utf8_boundary(story.text, p)) --p;
        return p;
      };
      std::size_t a = snap(pos(rng)), b = snap(pos(rng));
      if (a > b) std::swap(a, b);
      story = apply_edit(story, a, b, dt::random_word(rng, 0, 5), ds, spec);
    }
    s = add_story(s, story);
  }
  if (n > 0 && kind(rng) < 2) {
    set_draft(s, "Draft: ");
    insert_into_draft(s, "story-1", 0, s.stories[0].text.size(), 7);
  }
  return s;
}

Outcome persistence_roundtrip() {
  Checker c;
  const auto& spec = test_catalog().chart("medals");
  const auto& ds = test_catalog().dataset_for(spec);
  std::mt19937 rng(200);
  dt::TempDir dir;
  for (int i = 0; i < 200; ++i) {
    const auto s = random_session(rng, i, ds, spec);
    const auto path = dir / (s.id + ".json");
    save_session(s, path);
    const auto loaded = load_session(path);
    c.expect(loaded == s, "session " + s.id + " changed on reload");
    c.expect(dump_session(loaded) == read_file(path), "session " + s.id + " re-serializes differently");
  }
  return c.outcome("200 sessions, load(save(s)) == s");
}

struct Criterion {
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"prompt-fidelity", 1.0, prompt_fidelity},
      {"title-prompt-fidelity", 1.0, title_prompt_fidelity},
      {"replay-determinism", 10.0, replay_determinism},
      {"linker-oracle-equivalence", 30.0, linker_oracle_equivalence},
      {"two-state-comparison", 30.0, two_state_comparison},
      {"verifier-fuzz", 60.0, verifier_fuzz},
      {"edit-span-fuzz", 60.0, edit_span_fuzz},
      {"predicate-resolution", 30.0, predicate_resolution},
      {"persistence-roundtrip", 30.0, persistence_roundtrip},
  };
  int failed = 0;
  for (const auto& criterion : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criterion.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (out.pass && secs > criterion.budget_seconds) {
      out.pass = false;
      out.detail += "; over time budget";
    }
    char timing[64];
    std::snprintf(timing, sizeof timing, "%.3fs of %.0fs", secs, criterion.budget_seconds);
    std::cout << (out.pass ? "PASS " : "FAIL ") << criterion.name << ": " << out.detail << " [" << timing << "]\n";
    if (!out.pass) ++failed;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - failed << "/" << criteria.size() << "\n";
  return failed ? 1 : 0;
}
