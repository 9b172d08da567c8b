#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "datatales/clock.hpp"
#include "datatales/data_model.hpp"
#include "datatales/linker.hpp"
#include "datatales/llm.hpp"
#include "datatales/prompt.hpp"
#include "datatales/verifier.hpp"

namespace datatales {

inline constexpr int kSessionFormatVersion = 1;

enum class Source { generated, author };

inline std::string_view to_string(Source s) { return s == Source::author ? "author" : "generated"; }

inline Source source_from_string(std::string_view s) {
  if (s == "generated") return Source::generated;
  if (s == "author") return Source::author;
  throw Error(ErrorCode::SchemaError, "unknown span source " + std::string(s));
}

struct ProvenanceSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  Source source = Source::generated;
  friend bool operator==(const ProvenanceSpan&, const ProvenanceSpan&) = default;
};

/// Empty when the spans tile [0, text_length) contiguously with non-empty
/// spans and alternating sources; otherwise the first violation.
inline std::optional<std::string> span_violation(const std::vector<ProvenanceSpan>& spans, std::size_t text_length) {
  if (spans.empty()) {
    if (text_length == 0) return std::nullopt;
    return "non-empty text without provenance spans";
  }
  if (spans.front().start != 0) return "first span does not start at 0";
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].start >= spans[i].end) return "empty span at " + std::to_string(i);
    if (i > 0 && spans[i].start != spans[i - 1].end) return "gap or overlap before span " + std::to_string(i);
    if (i > 0 && spans[i].source == spans[i - 1].source) return "adjacent spans share a source at " + std::to_string(i);
  }
  if (spans.back().end != text_length) return "last span does not end at text length";
  return std::nullopt;
}

inline std::vector<ProvenanceSpan> merge_spans(std::vector<ProvenanceSpan> spans) {
  std::vector<ProvenanceSpan> out;
  for (auto& s : spans) {
    if (s.start >= s.end) continue;
    if (!out.empty() && out.back().source == s.source && out.back().end == s.start) out.back().end = s.end;
    else out.push_back(s);
  }
  return out;
}

struct Story {
  std::string id;
  std::string title;
  std::string text;
  std::vector<ProvenanceSpan> spans;
  PromptRecord narrative_prompt;
  PromptRecord title_prompt;
  std::string raw_narrative;
  std::string raw_title;
  GenerationParams params;
  LinkedStory linked;
  std::vector<VerificationFlag> flags;
  std::string created_at;

  /// Structural equality; `created_at` is deliberately not compared.
  friend bool operator==(const Story& a, const Story& b) {
    return a.id == b.id && a.title == b.title && a.text == b.text && a.spans == b.spans &&
           a.narrative_prompt == b.narrative_prompt && a.title_prompt == b.title_prompt &&
           a.raw_narrative == b.raw_narrative && a.raw_title == b.raw_title && a.params == b.params &&
           a.linked == b.linked && a.flags == b.flags;
  }
};

inline std::vector<ProvenanceSpan> generated_spans(std::size_t length) {
  if (length == 0) return {};
  return {ProvenanceSpan{0, length, Source::generated}};
}

/// Replaces [start, end) with `replacement`. The inserted text becomes one
/// author span; surviving spans keep their source and same-source neighbours
/// merge. Linking and numeric flags are recomputed against the new text.
inline Story apply_edit(const Story& story, std::size_t start, std::size_t end, const std::string& replacement,
                        const Dataset& ds, const ChartSpec& spec, double rel_tol = kDefaultRelTolerance) {
  if (start > end || end > story.text.size())
    throw Error(ErrorCode::RangeOutOfBounds, "edit range [" + std::to_string(start) + ", " + std::to_string(end) +
                                                 ") outside text of length " + std::to_string(story.text.size()));
  if (!is_utf8_boundary(story.text, start) || !is_utf8_boundary(story.text, end))
    throw Error(ErrorCode::RangeOutOfBounds, "edit range splits a UTF-8 character");
  if (!is_valid_utf8(replacement)) throw Error(ErrorCode::FormatError, "replacement is not valid UTF-8");
  if (start == end && replacement.empty()) return story;

  Story out = story;
  out.text = story.text.substr(0, start) + replacement + story.text.substr(end);
  const std::size_t inserted_end = start + replacement.size();
  std::vector<ProvenanceSpan> spans;
  for (const auto& s : story.spans) {
    if (s.start < start) spans.push_back({s.start, std::min(s.end, start), s.source});
  }
  if (!replacement.empty()) spans.push_back({start, inserted_end, Source::author});
  for (const auto& s : story.spans) {
    if (s.end > end) {
      const std::size_t from = std::max(s.start, end);
      spans.push_back({from - end + inserted_end, s.end - end + inserted_end, s.source});
    }
  }
  out.spans = merge_spans(std::move(spans));
  out.linked = link_story(out.text, ds, spec);
  out.flags = verify_story(out.linked, ds, rel_tol);
  return out;
}

/// Region of the master draft copied from a story, with its provenance.
struct DraftSegment {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string story_id;
  Source source = Source::generated;
  friend bool operator==(const DraftSegment&, const DraftSegment&) = default;
};

struct Session {
  std::string id;
  std::string chart_id;
  std::vector<Annotation> annotations;
  std::vector<Story> stories;
  std::string master_draft;
  std::vector<DraftSegment> draft_segments;
  int version = kSessionFormatVersion;

  const Story* find_story(std::string_view story_id) const {
    for (const auto& s : stories)
      if (s.id == story_id) return &s;
    return nullptr;
  }

  friend bool operator==(const Session&, const Session&) = default;
};

inline Session add_story(Session s, Story story) {
  if (s.find_story(story.id)) throw Error(ErrorCode::DuplicateId, "story id " + story.id + " already in session");
  if (auto v = span_violation(story.spans, story.text.size())) throw Error(ErrorCode::SchemaError, *v);
  if (story.linked.text != story.text) throw Error(ErrorCode::SchemaError, "story linkage is stale");
  s.stories.push_back(std::move(story));
  return s;
}

/// Free-form replacement of the master draft; copied provenance is dropped.
inline void set_draft(Session& s, std::string text) {
  if (!is_valid_utf8(text)) throw Error(ErrorCode::FormatError, "draft is not valid UTF-8");
  s.master_draft = std::move(text);
  s.draft_segments.clear();
}

/// Copies story text [from, to) into the draft at byte offset `at`, keeping
/// the story's provenance for the copied characters.
inline void insert_into_draft(Session& s, std::string_view story_id, std::size_t from, std::size_t to,
                              std::size_t at) {
  const Story* story = s.find_story(story_id);
  if (!story) throw Error(ErrorCode::UnknownStory, "no story " + std::string(story_id));
  if (from > to || to > story->text.size()) throw Error(ErrorCode::RangeOutOfBounds, "story range out of bounds");
  if (at > s.master_draft.size()) throw Error(ErrorCode::RangeOutOfBounds, "draft offset out of bounds");
  if (!is_utf8_boundary(story->text, from) || !is_utf8_boundary(story->text, to) ||
      !is_utf8_boundary(s.master_draft, at))
    throw Error(ErrorCode::RangeOutOfBounds, "range splits a UTF-8 character");
  const std::size_t len = to - from;
  if (len == 0) return;
  std::vector<DraftSegment> segments;
  for (const auto& seg : s.draft_segments) {
    if (seg.end <= at) {
      segments.push_back(seg);
    } else if (seg.start >= at) {
      segments.push_back({seg.start + len, seg.end + len, seg.story_id, seg.source});
    } else {
      segments.push_back({seg.start, at, seg.story_id, seg.source});
      segments.push_back({at + len, seg.end + len, seg.story_id, seg.source});
    }
  }
  for (const auto& span : story->spans) {
    const std::size_t a = std::max(span.start, from), b = std::min(span.end, to);
    if (a < b) segments.push_back({a - from + at, b - from + at, story->id, span.source});
  }
  std::sort(segments.begin(), segments.end(), [](const auto& x, const auto& y) { return x.start < y.start; });
  s.master_draft.insert(at, story->text.substr(from, len));
  s.draft_segments = std::move(segments);
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(json& j, const ProvenanceSpan& s) {
  j = json{{"start", s.start}, {"end", s.end}, {"source", to_string(s.source)}};
}
inline void from_json(const json& j, ProvenanceSpan& s) {
  s.start = j.at("start").get<std::size_t>();
  s.end = j.at("end").get<std::size_t>();
  s.source = source_from_string(j.at("source").get<std::string>());
}

inline void to_json(json& j, const DraftSegment& s) {
  j = json{{"start", s.start}, {"end", s.end}, {"story_id", s.story_id}, {"source", to_string(s.source)}};
}
inline void from_json(const json& j, DraftSegment& s) {
  s.start = j.at("start").get<std::size_t>();
  s.end = j.at("end").get<std::size_t>();
  s.story_id = j.at("story_id").get<std::string>();
  s.source = source_from_string(j.at("source").get<std::string>());
}

inline void to_json(json& j, const Story& s) {
  j = json{{"id", s.id},
           {"title", s.title},
           {"text", s.text},
           {"spans", s.spans},
           {"narrative_prompt", s.narrative_prompt},
           {"title_prompt", s.title_prompt},
           {"raw_narrative", s.raw_narrative},
           {"raw_title", s.raw_title},
           {"params", s.params},
           {"linked", s.linked},
           {"flags", s.flags},
           {"created_at", s.created_at}};
}

inline void from_json(const json& j, Story& s) {
  s.id = j.at("id").get<std::string>();
  s.title = j.at("title").get<std::string>();
  s.text = j.at("text").get<std::string>();
  s.spans = j.at("spans").get<std::vector<ProvenanceSpan>>();
  s.narrative_prompt = j.at("narrative_prompt").get<PromptRecord>();
  s.title_prompt = j.at("title_prompt").get<PromptRecord>();
  s.raw_narrative = j.at("raw_narrative").get<std::string>();
  s.raw_title = j.at("raw_title").get<std::string>();
  s.params = j.at("params").get<GenerationParams>();
  s.linked = j.at("linked").get<LinkedStory>();
  s.flags = j.at("flags").get<std::vector<VerificationFlag>>();
  s.created_at = j.value("created_at", std::string{});
}

inline json session_to_json(const Session& s) {
  json anns = json::array();
  for (const auto& a : s.annotations) anns.push_back(a);
  return json{{"version", s.version},         {"id", s.id},
              {"chart_id", s.chart_id},       {"annotations", anns},
              {"stories", s.stories},         {"master_draft", s.master_draft},
              {"draft_segments", s.draft_segments}};
}

inline Session session_from_json(const json& j) {
  if (!j.is_object() || !j.contains("version") || !j["version"].is_number_integer())
    throw Error(ErrorCode::SchemaError, "session record lacks an integer version");
  const int version = j["version"].get<int>();
  if (version != kSessionFormatVersion)
    throw Error(ErrorCode::VersionError, "unsupported session format version " + std::to_string(version) +
                                             " (this build reads version " + std::to_string(kSessionFormatVersion) + ")");
  Session s;
  try {
    s.version = version;
    s.id = j.at("id").get<std::string>();
    s.chart_id = j.at("chart_id").get<std::string>();
    for (const auto& a : j.at("annotations")) s.annotations.push_back(annotation_from_json(a));
    s.stories = j.at("stories").get<std::vector<Story>>();
    s.master_draft = j.at("master_draft").get<std::string>();
    s.draft_segments = j.value("draft_segments", std::vector<DraftSegment>{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("session record: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SchemaError) throw;
    throw Error(ErrorCode::SchemaError, std::string("session record: ") + e.what());
  }
  std::vector<std::string> ids;
  for (const auto& story : s.stories) {
    if (std::find(ids.begin(), ids.end(), story.id) != ids.end())
      throw Error(ErrorCode::SchemaError, "duplicate story id " + story.id);
    ids.push_back(story.id);
    if (auto v = span_violation(story.spans, story.text.size()))
      throw Error(ErrorCode::SchemaError, "story " + story.id + ": " + *v);
    if (story.linked.text != story.text) throw Error(ErrorCode::SchemaError, "story " + story.id + ": stale linkage");
  }
  return s;
}

inline std::string dump_session(const Session& s) { return session_to_json(s).dump(2) + "\n"; }

inline void save_session(const Session& s, const std::filesystem::path& path) {
  write_file_atomic(path, dump_session(s));
}

inline Session load_session(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
  return session_from_json(j);
}

// ---------------------------------------------------------------------------
// Store

/// Directory of `<session-id>.json` files plus an in-memory cache. Mutations
/// of one session are serialized; distinct sessions proceed independently.
class SessionStore {
 public:
  using ChartExists = std::function<bool(const std::string&)>;

  SessionStore(std::filesystem::path dir, ChartExists chart_exists)
      : dir_(std::move(dir)), chart_exists_(std::move(chart_exists)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    for (const auto& entry : std::filesystem::directory_iterator(dir_, ec)) {
      unsigned long n = 0;
      if (std::sscanf(entry.path().filename().string().c_str(), "session-%lu.json", &n) == 1)
        next_id_ = std::max(next_id_, n + 1);
    }
  }

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path_for(const std::string& id) const { return dir_ / (id + ".json"); }

  Session create_session(const std::string& chart_id) {
    if (!chart_exists_ || !chart_exists_(chart_id)) throw Error(ErrorCode::UnknownChart, "unknown chart " + chart_id);
    std::shared_ptr<Slot> slot;
    {
      std::lock_guard lock(mutex_);
      char buf[32];
      std::snprintf(buf, sizeof buf, "session-%04lu", next_id_++);
      slot = std::make_shared<Slot>();
      slot->session.id = buf;
      slot->session.chart_id = chart_id;
      slots_.emplace(slot->session.id, slot);
    }
    std::lock_guard lock(slot->mutex);
    save_session(slot->session, path_for(slot->session.id));
    return slot->session;
  }

  Session get(const std::string& id) {
    auto slot = find_slot(id);
    std::lock_guard lock(slot->mutex);
    return slot->session;
  }

  /// Applies `fn` under the session's lock and persists the result. If `fn`
  /// throws, neither memory nor disk changes.
  template <typename Fn>
  auto mutate(const std::string& id, Fn&& fn) {
    auto slot = find_slot(id);
    std::lock_guard lock(slot->mutex);
    Session working = slot->session;
    if constexpr (std::is_void_v<std::invoke_result_t<Fn, Session&>>) {
      fn(working);
      save_session(working, path_for(id));
      slot->session = std::move(working);
    } else {
      auto result = fn(working);
      save_session(working, path_for(id));
      slot->session = std::move(working);
      return result;
    }
  }

  std::vector<std::string> ids() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : slots_) out.push_back(id);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Slot {
    std::mutex mutex;
    Session session;
  };

  std::shared_ptr<Slot> find_slot(const std::string& id) {
    std::lock_guard lock(mutex_);
    if (auto it = slots_.find(id); it != slots_.end()) return it->second;
    // Sessions from earlier runs are loaded on first access. Ids are plain
    // file stems, never paths.
    if (id.empty() || id.find_first_of("/\\.") != std::string::npos)
      throw Error(ErrorCode::UnknownSession, "unknown session " + id);
    const auto path = path_for(id);
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::UnknownSession, "unknown session " + id);
    auto slot = std::make_shared<Slot>();
    slot->session = load_session(path);
    slots_.emplace(id, slot);
    return slot;
  }

  std::filesystem::path dir_;
  ChartExists chart_exists_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<Slot>> slots_;
  unsigned long next_id_ = 1;
};

}  // namespace datatales
