#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "datatales/data_model.hpp"
#include "datatales/linker.hpp"

namespace datatales {

inline constexpr double kDefaultRelTolerance = 0.005;

struct NumericMention {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string raw;
  double value = 0;
  bool percent = false;
  bool year_candidate = false;

  friend bool operator==(const NumericMention&, const NumericMention&) = default;
};

namespace detail {

inline bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

inline std::optional<double> magnitude_multiplier(std::string_view word) {
  const auto w = to_lower(word);
  if (w == "thousand") return 1e3;
  if (w == "million") return 1e6;
  if (w == "billion") return 1e9;
  return std::nullopt;
}

// Parses one mention starting exactly at `pos`, or returns nullopt.
inline std::optional<NumericMention> parse_mention_at(std::string_view text, std::size_t pos) {
  const std::size_t n = text.size();
  std::size_t i = pos;
  bool negative = false;
  if (i < n && text[i] == '-') {
    negative = true;
    ++i;
  }
  if (i >= n || !is_digit(text[i])) return std::nullopt;

  std::string digits;
  std::size_t lead = 0;
  while (i < n && is_digit(text[i])) {
    digits.push_back(text[i++]);
    ++lead;
  }
  bool grouped = false;
  if (lead <= 3) {
    while (i + 3 < n && text[i] == ',' && is_digit(text[i + 1]) && is_digit(text[i + 2]) && is_digit(text[i + 3]) &&
           (i + 4 >= n || !is_digit(text[i + 4]))) {
      digits.append(text.substr(i + 1, 3));
      i += 4;
      grouped = true;
    }
  }
  bool decimal = false;
  if (i + 1 < n && text[i] == '.' && is_digit(text[i + 1])) {
    digits.push_back('.');
    ++i;
    while (i < n && is_digit(text[i])) digits.push_back(text[i++]);
    decimal = true;
  }
  // "58th", "2000s" and "4x" are not quantities.
  if (i < n && (is_word_char(text[i]))) return std::nullopt;

  auto parsed = parse_number(digits);
  if (!parsed) return std::nullopt;
  NumericMention m;
  m.start = pos;
  m.value = negative ? -*parsed : *parsed;
  std::size_t end = i;

  if (end < n && text[end] == '%') {
    m.percent = true;
    ++end;
  } else {
    std::size_t w = end;
    while (w < n && text[w] == ' ') ++w;
    std::size_t we = w;
    while (we < n && is_alpha(text[we])) ++we;
    if (w > end && we > w && (we >= n || !is_word_char(text[we]))) {
      const auto word = text.substr(w, we - w);
      if (auto mult = magnitude_multiplier(word)) {
        m.value *= *mult;
        end = we;
      } else if (to_lower(word) == "percent") {
        m.percent = true;
        end = we;
      }
    }
  }
  m.end = end;
  m.raw = std::string(text.substr(pos, end - pos));
  m.year_candidate = !negative && !grouped && !decimal && !m.percent && lead == 4 && end == i && m.value >= 1000 &&
                     m.value <= 2999;
  return m;
}

}  // namespace detail

/// Parses a mention's surface form back to its value (magnitude words expanded).
inline std::optional<double> parse_mention_value(std::string_view raw) {
  auto m = detail::parse_mention_at(raw, 0);
  if (!m || m->end != raw.size()) return std::nullopt;
  return m->value;
}

/// Integers, decimals, thousands-grouped numbers, percentages and
/// number + thousand/million/billion. Four-digit integers in [1000, 2999]
/// carry `year_candidate`.
inline std::vector<NumericMention> extract_numeric_mentions(std::string_view text) {
  using namespace detail;
  std::vector<NumericMention> out;
  const std::size_t n = text.size();
  // Skips a word together with digit separators, so "A4" or "B-52" yield nothing.
  auto skip_word = [&](std::size_t i) {
    while (i < n && (is_word_char(text[i]) || ((text[i] == '.' || text[i] == ',') && i > 0 && is_digit(text[i - 1]) &&
                                               i + 1 < n && is_digit(text[i + 1]))))
      ++i;
    return i;
  };
  std::size_t i = 0;
  while (i < n) {
    // "B-52" is a name; "2000-2004" is two years.
    const bool hyphenated = i >= 2 && text[i - 1] == '-' && is_alpha(text[i - 2]);
    const bool at_boundary =
        i == 0 || !(is_word_char(text[i - 1]) || text[i - 1] == '.' || text[i - 1] == ',' || hyphenated);
    const bool signed_start =
        text[i] == '-' && i + 1 < n && is_digit(text[i + 1]) && (i == 0 || is_space(text[i - 1]));
    if ((is_digit(text[i]) && at_boundary) || signed_start) {
      if (auto m = parse_mention_at(text, i)) {
        i = m->end;
        out.push_back(std::move(*m));
        continue;
      }
      i = skip_word(signed_start ? i + 1 : i);
      continue;
    }
    i = is_word_char(text[i]) ? skip_word(i) : i + 1;
  }
  return out;
}

struct VerificationMatch {
  std::string field;
  double value = 0;
  std::vector<std::size_t> rows;
  friend bool operator==(const VerificationMatch&, const VerificationMatch&) = default;
};

enum class VerificationStatus { verified, unverified };

struct VerificationFlag {
  NumericMention mention;
  VerificationStatus status = VerificationStatus::unverified;
  std::optional<VerificationMatch> matched;

  friend bool operator==(const VerificationFlag&, const VerificationFlag&) = default;
};

inline bool within_tolerance(double mention, double value, double rel_tol) {
  return std::fabs(mention - value) <= rel_tol * std::fabs(value);
}

/// Checks one value against candidate rows. Quantitative fields use the
/// relative tolerance; temporal fields must match exactly.
inline std::optional<VerificationMatch> find_support(double value, const std::vector<std::size_t>& rows,
                                                     const Dataset& ds, double rel_tol) {
  for (std::size_t c = 0; c < ds.fields().size(); ++c) {
    const FieldDef& f = ds.fields()[c];
    if (!is_numeric_kind(f.kind)) continue;
    VerificationMatch match{f.name, 0, {}};
    double best = INFINITY;
    for (std::size_t r : rows) {
      const auto* v = as_number(ds.rows()[r][c]);
      if (!v) continue;
      const bool ok = f.kind == FieldKind::temporal ? nearly_equal(value, *v) : within_tolerance(value, *v, rel_tol);
      if (!ok) continue;
      match.rows.push_back(r);
      if (std::fabs(value - *v) < best) {
        best = std::fabs(value - *v);
        match.value = *v;
      }
    }
    if (!match.rows.empty()) return match;
  }
  return std::nullopt;
}

/// Flags every numeric mention. The search covers rows selected by the
/// categorical references of the mention's sentence when there are any,
/// otherwise the whole dataset. Derived quantities (sums, differences) are
/// not reconstructed and come out unverified.
inline std::vector<VerificationFlag> verify_story(const LinkedStory& linked, const Dataset& ds,
                                                  double rel_tol = kDefaultRelTolerance) {
  std::vector<std::size_t> all_rows(ds.row_count());
  for (std::size_t r = 0; r < all_rows.size(); ++r) all_rows[r] = r;

  std::vector<VerificationFlag> out;
  for (auto& mention : extract_numeric_mentions(linked.text)) {
    std::vector<std::size_t> scope = all_rows;
    for (const auto& s : linked.sentences) {
      if (mention.start < s.start || mention.start >= s.end) continue;
      auto it = linked.references.find(s.index);
      if (it == linked.references.end()) break;
      PredicateSet categorical;
      for (const auto& ref : it->second) {
        const auto* f = ds.field(ref.field);
        if (!f || f->kind != FieldKind::categorical || is_null(ref.value)) continue;
        Conjunction conj{EqualsClause{ref.field, ref.value}};
        if (std::find(categorical.begin(), categorical.end(), conj) == categorical.end()) categorical.push_back(conj);
      }
      if (!categorical.empty()) scope = resolve_predicate(categorical, ds);
      break;
    }
    VerificationFlag flag{std::move(mention), VerificationStatus::unverified, std::nullopt};
    if (auto match = find_support(flag.mention.value, scope, ds, rel_tol)) {
      flag.status = VerificationStatus::verified;
      flag.matched = std::move(match);
    }
    out.push_back(std::move(flag));
  }
  return out;
}

inline void to_json(json& j, const NumericMention& m) {
  j = json{{"start", m.start}, {"end", m.end},           {"raw", m.raw},
           {"value", m.value}, {"percent", m.percent},   {"year_candidate", m.year_candidate}};
}

inline void from_json(const json& j, NumericMention& m) {
  m.start = j.at("start").get<std::size_t>();
  m.end = j.at("end").get<std::size_t>();
  m.raw = j.at("raw").get<std::string>();
  m.value = j.at("value").get<double>();
  m.percent = j.at("percent").get<bool>();
  m.year_candidate = j.at("year_candidate").get<bool>();
}

inline void to_json(json& j, const VerificationFlag& f) {
  j = json{{"mention", f.mention}, {"status", f.status == VerificationStatus::verified ? "verified" : "unverified"}};
  if (f.matched) j["matched"] = json{{"field", f.matched->field}, {"value", f.matched->value}, {"rows", f.matched->rows}};
  else j["matched"] = nullptr;
}

inline void from_json(const json& j, VerificationFlag& f) {
  f.mention = j.at("mention").get<NumericMention>();
  const auto status = j.at("status").get<std::string>();
  if (status != "verified" && status != "unverified") throw Error(ErrorCode::SchemaError, "unknown status " + status);
  f.status = status == "verified" ? VerificationStatus::verified : VerificationStatus::unverified;
  f.matched.reset();
  if (j.contains("matched") && !j["matched"].is_null()) {
    const auto& m = j["matched"];
    f.matched = VerificationMatch{m.at("field").get<std::string>(), m.at("value").get<double>(),
                                  m.at("rows").get<std::vector<std::size_t>>()};
  }
  if ((f.status == VerificationStatus::verified) != f.matched.has_value())
    throw Error(ErrorCode::SchemaError, "verified flags must carry a match and only they may");
}

}  // namespace datatales
