#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "datatales/data_model.hpp"

namespace datatales {

// ---------------------------------------------------------------------------
// Sentence segmentation

/// Half-open byte range [start, end) of one sentence in the story text.
struct SentenceSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t index = 0;
  friend bool operator==(const SentenceSpan&, const SentenceSpan&) = default;
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
inline bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; }
inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }
inline bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }
inline bool is_opener(char c) { return c == '"' || c == '\'' || c == '(' || c == '['; }

// Bytes >= 0x80 count as word characters so UTF-8 names tokenize whole.
inline bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) != 0 || u >= 0x80;
}

inline bool ends_with_abbreviation(std::string_view text, std::size_t dot) {
  static const std::set<std::string, std::less<>> kAbbreviations{
      "vs", "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "approx", "fig", "cf"};
  std::size_t b = dot;
  while (b > 0 && (std::isalpha(static_cast<unsigned char>(text[b - 1])) || text[b - 1] == '.')) --b;
  std::string_view word = text.substr(b, dot - b);
  if (word.empty()) return false;
  // Dotted forms such as "U.S", "e.g", "i.e".
  if (word.find('.') != std::string_view::npos) return true;
  return kAbbreviations.count(to_lower(word)) > 0;
}

}  // namespace detail

/// Splits at '.', '!' or '?' runs followed by whitespace and an uppercase
/// letter (optionally behind an opening quote or bracket), or by end of text.
/// Decimals, ellipses and known abbreviations never split.
inline std::vector<SentenceSpan> segment_sentences(std::string_view text) {
  using namespace detail;
  std::vector<SentenceSpan> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto skip_space = [&](std::size_t p) {
    while (p < n && is_space(text[p])) ++p;
    return p;
  };
  std::size_t start = skip_space(0);
  i = start;
  while (i < n) {
    if (!is_terminator(text[i])) {
      ++i;
      continue;
    }
    std::size_t run_end = i;
    while (run_end < n && is_terminator(text[run_end])) ++run_end;
    const std::string_view run = text.substr(i, run_end - i);
    const bool ellipsis = run.size() >= 2 && run.find_first_not_of('.') == std::string_view::npos;
    const bool abbreviation = run == "." && ends_with_abbreviation(text, i);
    std::size_t close = run_end;
    while (close < n && is_closer(text[close])) ++close;

    bool boundary = false;
    if (!ellipsis && !abbreviation) {
      std::size_t next = skip_space(close);
      if (next == n) {
        boundary = true;
      } else if (next > close) {
        std::size_t p = next;
        while (p < n && is_opener(text[p])) ++p;
        boundary = p < n && is_upper(text[p]);
      }
    }
    if (boundary) {
      out.push_back(SentenceSpan{start, close, out.size()});
      start = skip_space(close);
      i = start;
    } else {
      i = run_end;
    }
  }
  if (start < n) {
    std::size_t end = n;
    while (end > start && is_space(text[end - 1])) --end;
    out.push_back(SentenceSpan{start, end, out.size()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tokens and normalization

struct Token {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string lower;
  bool numeric = false;
};

/// Word tokens: runs of letters/digits. Digit runs absorb "3.5" and "1,200"
/// style separators.
inline std::vector<Token> tokenize(std::string_view text) {
  using namespace detail;
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    if (!is_word_char(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    bool all_digits = true;
    while (j < n) {
      if (is_word_char(text[j])) {
        if (!is_digit(text[j])) all_digits = false;
        ++j;
        continue;
      }
      if (all_digits && j > i) {
        if (text[j] == '.' && j + 1 < n && is_digit(text[j + 1])) {
          ++j;
          continue;
        }
        if (text[j] == ',' && j + 3 < n && is_digit(text[j + 1]) && is_digit(text[j + 2]) &&
            is_digit(text[j + 3]) && (j + 4 >= n || !is_digit(text[j + 4]))) {
          ++j;
          continue;
        }
      }
      break;
    }
    Token t{i, j, to_lower(text.substr(i, j - i)), false};
    t.numeric = all_digits;
    out.push_back(std::move(t));
    i = j;
  }
  return out;
}

/// Drops a trailing 's' from non-numeric tokens of four or more characters.
inline std::string plural_trim(const std::string& token) {
  if (token.size() >= 4 && token.back() == 's' && !detail::is_digit(token.front()))
    return token.substr(0, token.size() - 1);
  return token;
}

inline std::string join_tokens(const std::vector<Token>& tokens, std::size_t from, std::size_t count, bool trimmed) {
  std::string key;
  for (std::size_t k = from; k < from + count; ++k) {
    if (k > from) key += ' ';
    key += trimmed ? plural_trim(tokens[k].lower) : tokens[k].lower;
  }
  return key;
}

/// Lowercase, tokenized, single-space joined surface form.
inline std::string normalize_surface(std::string_view text) {
  auto tokens = tokenize(text);
  return join_tokens(tokens, 0, tokens.size(), false);
}

// ---------------------------------------------------------------------------
// Value index

enum class MatchKind { value_exact, value_normalized, field_name, numeric };

inline std::string_view to_string(MatchKind k) {
  switch (k) {
    case MatchKind::value_exact: return "value_exact";
    case MatchKind::value_normalized: return "value_normalized";
    case MatchKind::field_name: return "field_name";
    case MatchKind::numeric: return "numeric";
  }
  return "value_exact";
}

inline MatchKind match_kind_from_string(std::string_view s) {
  for (auto k : {MatchKind::value_exact, MatchKind::value_normalized, MatchKind::field_name, MatchKind::numeric})
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::SchemaError, "unknown match kind " + std::string(s));
}

inline constexpr std::size_t kMaxNgram = 5;

struct IndexEntry {
  std::string field;
  Value value;          // null for field-name entries
  MatchKind kind;       // value_exact, field_name or numeric
  std::string original; // source string the entry was built from
};

class ValueIndex {
 public:
  std::vector<IndexEntry> entries;
  /// Normalized surface form (and plural-trimmed variant) -> entry ids.
  std::unordered_map<std::string, std::vector<std::size_t>> table;
  /// Rounded values per quantitative field, for numeric tokens that do not
  /// hit the table verbatim (e.g. "58.0").
  std::vector<std::pair<std::string, std::vector<double>>> numeric_values;

  const std::vector<std::size_t>* lookup(const std::string& key) const {
    auto it = table.find(key);
    return it == table.end() ? nullptr : &it->second;
  }

  bool has_surface(const std::string& key) const { return table.count(key) > 0; }

  void add(const std::string& surface, IndexEntry entry) {
    const auto tokens = tokenize(surface);
    if (tokens.empty() || tokens.size() > kMaxNgram) return;
    const std::size_t id = entries.size();
    entries.push_back(std::move(entry));
    link(join_tokens(tokens, 0, tokens.size(), false), id);
    link(join_tokens(tokens, 0, tokens.size(), true), id);
  }

 private:
  void link(const std::string& key, std::size_t id) {
    auto& ids = table[key];
    // Avoid duplicate (field, value) under one key.
    const auto& e = entries[id];
    for (auto existing : ids) {
      const auto& o = entries[existing];
      if (o.field == e.field && o.kind == e.kind &&
          (is_null(o.value) ? is_null(e.value) : values_equal(o.value, e.value)))
        return;
    }
    ids.push_back(id);
  }
};

inline ValueIndex build_value_index(const Dataset& ds, const ChartSpec& /*spec*/) {
  ValueIndex idx;
  for (std::size_t c = 0; c < ds.fields().size(); ++c) {
    const FieldDef& f = ds.fields()[c];
    idx.add(f.name, IndexEntry{f.name, std::monostate{}, MatchKind::field_name, f.name});
    std::set<std::string> seen_strings;
    std::vector<double> rounded;
    for (const auto& row : ds.rows()) {
      const Value& v = row[c];
      if (const auto* s = as_string(v)) {
        if (seen_strings.insert(*s).second) idx.add(*s, IndexEntry{f.name, v, MatchKind::value_exact, *s});
      } else if (const auto* d = as_number(v)) {
        if (f.kind == FieldKind::temporal) {
          const auto form = format_shortest(*d);
          if (seen_strings.insert(form).second) idx.add(form, IndexEntry{f.name, v, MatchKind::value_exact, form});
        } else {
          const double r = round_to(*d, f.display_precision);
          const auto form = format_number(*d, f.display_precision);
          if (seen_strings.insert(form).second) {
            rounded.push_back(r);
            idx.add(form, IndexEntry{f.name, Value{r}, MatchKind::numeric, form});
            const auto grouped = with_thousands_separators(form);
            if (grouped != form) idx.add(grouped, IndexEntry{f.name, Value{r}, MatchKind::numeric, grouped});
          }
        }
      }
    }
    if (f.kind == FieldKind::quantitative) idx.numeric_values.emplace_back(f.name, std::move(rounded));
  }
  return idx;
}

// ---------------------------------------------------------------------------
// References

/// A matched phrase; offsets are relative to the sentence it was found in.
struct DataReference {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string field;
  Value value;
  MatchKind match_kind = MatchKind::value_exact;

  friend bool operator==(const DataReference& a, const DataReference& b) {
    return a.start == b.start && a.end == b.end && a.field == b.field && a.match_kind == b.match_kind &&
           a.value.index() == b.value.index() && (is_null(a.value) || values_equal(a.value, b.value));
  }
};

/// Longest-match-first scan of token n-grams (up to five tokens). Overlaps
/// go to the longer match, then the leftmost. An n-gram that names several
/// (field, value) entries yields one reference per entry.
inline std::vector<DataReference> extract_references(std::string_view sentence, const ValueIndex& idx) {
  const auto tokens = tokenize(sentence);
  struct Candidate {
    std::size_t first;
    std::size_t count;
    std::vector<std::size_t> entry_ids;
    bool normalized;  // matched only after plural-trim
    std::vector<std::pair<std::string, double>> numeric_fallback;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t n = 1; n <= kMaxNgram && i + n <= tokens.size(); ++n) {
      Candidate cand{i, n, {}, false, {}};
      if (const auto* ids = idx.lookup(join_tokens(tokens, i, n, false))) {
        cand.entry_ids = *ids;
      } else if (const auto* trimmed = idx.lookup(join_tokens(tokens, i, n, true))) {
        cand.entry_ids = *trimmed;
        cand.normalized = true;
      }
      if (n == 1 && tokens[i].numeric) {
        std::string digits;
        for (char ch : tokens[i].lower)
          if (ch != ',') digits.push_back(ch);
        if (auto parsed = parse_number(digits)) {
          for (const auto& [field, values] : idx.numeric_values) {
            const bool covered = std::any_of(cand.entry_ids.begin(), cand.entry_ids.end(),
                                             [&](std::size_t id) { return idx.entries[id].field == field; });
            if (covered) continue;
            for (double v : values)
              if (nearly_equal(*parsed, v)) {
                cand.numeric_fallback.emplace_back(field, v);
                break;
              }
          }
        }
      }
      if (!cand.entry_ids.empty() || !cand.numeric_fallback.empty()) candidates.push_back(std::move(cand));
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.count != b.count ? a.count > b.count : a.first < b.first;
  });
  std::vector<bool> taken(tokens.size(), false);
  std::vector<const Candidate*> accepted;
  for (const auto& c : candidates) {
    bool free = true;
    for (std::size_t k = c.first; k < c.first + c.count; ++k) free = free && !taken[k];
    if (!free) continue;
    for (std::size_t k = c.first; k < c.first + c.count; ++k) taken[k] = true;
    accepted.push_back(&c);
  }
  std::sort(accepted.begin(), accepted.end(), [](const Candidate* a, const Candidate* b) { return a->first < b->first; });

  std::vector<DataReference> out;
  for (const Candidate* c : accepted) {
    const std::size_t start = tokens[c->first].start;
    const std::size_t end = tokens[c->first + c->count - 1].end;
    const std::string_view slice = sentence.substr(start, end - start);
    for (std::size_t id : c->entry_ids) {
      const IndexEntry& e = idx.entries[id];
      MatchKind kind = e.kind;
      if (kind == MatchKind::value_exact && (c->normalized || slice != e.original)) kind = MatchKind::value_normalized;
      out.push_back(DataReference{start, end, e.field, e.value, kind});
    }
    for (const auto& [field, v] : c->numeric_fallback)
      out.push_back(DataReference{start, end, field, Value{v}, MatchKind::numeric});
  }
  return out;
}

/// Union semantics: one {field = value} conjunction per value-bearing
/// reference, duplicates removed. Field-name references add nothing.
inline PredicateSet sentence_highlight_predicate(const std::vector<DataReference>& refs, const Dataset& /*ds*/) {
  PredicateSet out;
  for (const auto& r : refs) {
    if (is_null(r.value)) continue;
    Conjunction conj{EqualsClause{r.field, r.value}};
    if (std::find(out.begin(), out.end(), conj) == out.end()) out.push_back(std::move(conj));
  }
  return out;
}

struct LinkedStory {
  std::string text;
  std::vector<SentenceSpan> sentences;
  /// Sentence index -> references; only sentences with references appear.
  std::map<std::size_t, std::vector<DataReference>> references;
  /// Same key set as `references` (the underlined sentences).
  std::map<std::size_t, PredicateSet> highlight;

  bool underlined(std::size_t sentence) const { return references.count(sentence) > 0; }

  friend bool operator==(const LinkedStory&, const LinkedStory&) = default;
};

inline LinkedStory link_story(std::string text, const Dataset& ds, const ChartSpec& spec) {
  LinkedStory out;
  out.sentences = segment_sentences(text);
  const ValueIndex idx = build_value_index(ds, spec);
  for (const auto& s : out.sentences) {
    auto refs = extract_references(std::string_view(text).substr(s.start, s.end - s.start), idx);
    if (refs.empty()) continue;
    out.highlight.emplace(s.index, sentence_highlight_predicate(refs, ds));
    out.references.emplace(s.index, std::move(refs));
  }
  out.text = std::move(text);
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(json& j, const DataReference& r) {
  j = json{{"start", r.start},
           {"end", r.end},
           {"field", r.field},
           {"value", value_to_json(r.value)},
           {"match_kind", to_string(r.match_kind)}};
}

inline void from_json(const json& j, DataReference& r) {
  r.start = j.at("start").get<std::size_t>();
  r.end = j.at("end").get<std::size_t>();
  r.field = j.at("field").get<std::string>();
  r.value = value_from_json(j.at("value"));
  r.match_kind = match_kind_from_string(j.at("match_kind").get<std::string>());
}

inline void to_json(json& j, const LinkedStory& l) {
  json sentences = json::array();
  for (const auto& s : l.sentences) {
    json entry{{"index", s.index}, {"start", s.start}, {"end", s.end}, {"underlined", l.underlined(s.index)}};
    if (auto it = l.references.find(s.index); it != l.references.end()) entry["references"] = it->second;
    else entry["references"] = json::array();
    if (auto it = l.highlight.find(s.index); it != l.highlight.end()) entry["highlight"] = it->second;
    else entry["highlight"] = json::array();
    sentences.push_back(std::move(entry));
  }
  j = json{{"text", l.text}, {"sentences", sentences}};
}

inline void from_json(const json& j, LinkedStory& l) {
  l = LinkedStory{};
  l.text = j.at("text").get<std::string>();
  for (const auto& s : j.at("sentences")) {
    SentenceSpan span{s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>(), s.at("index").get<std::size_t>()};
    l.sentences.push_back(span);
    if (s.value("underlined", false)) {
      l.references[span.index] = s.at("references").get<std::vector<DataReference>>();
      l.highlight[span.index] = s.at("highlight").get<PredicateSet>();
    }
  }
}

}  // namespace datatales
