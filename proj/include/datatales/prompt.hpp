#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "datatales/data_model.hpp"
#include "datatales/digest.hpp"

namespace datatales {

enum class FocusVerb { focusing_on, comparing };

inline std::string_view to_string(FocusVerb v) { return v == FocusVerb::comparing ? "comparing" : "focusing on"; }

inline FocusVerb focus_verb_from_string(std::string_view s) {
  if (s == "focusing on") return FocusVerb::focusing_on;
  if (s == "comparing") return FocusVerb::comparing;
  throw Error(ErrorCode::BadRequest, "focus_verb must be \"focusing on\" or \"comparing\"");
}

inline constexpr std::size_t kDefaultDataCharBudget = 12000;

struct PromptOptions {
  bool include_no_names_directive = true;
  FocusVerb focus_verb = FocusVerb::focusing_on;
  /// Upper bound on the serialized data length; larger data is rejected.
  std::size_t data_char_budget = kDefaultDataCharBudget;

  friend bool operator==(const PromptOptions&, const PromptOptions&) = default;
};

enum class PromptKind { narrative, title };

struct PromptRecord {
  std::string text;
  PromptKind kind = PromptKind::narrative;
  std::string chart_id;
  std::string annotation_fingerprint;
  PromptOptions options;

  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

inline std::string_view chart_type_phrase(ChartType t) {
  switch (t) {
    case ChartType::bar: return "bar chart";
    case ChartType::stacked_bar: return "stacked bar chart";
    case ChartType::grouped_bar: return "grouped bar chart";
    case ChartType::line: return "line chart";
    case ChartType::multi_line: return "multi-series line chart";
    case ChartType::scatter: return "scatterplot";
    case ChartType::choropleth: return "choropleth map";
  }
  return "chart";
}

/// Compact JSON array of row records: `[{"Year": 2000, "Country": "Australia"}]`.
/// Keys follow dataset field order; numbers are rounded to display precision.
inline std::string serialize_rows(const Dataset& ds, const ChartSpec& /*spec*/) {
  std::string out = "[";
  const auto& fields = ds.fields();
  for (std::size_t r = 0; r < ds.row_count(); ++r) {
    if (r) out += ", ";
    out += '{';
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (c) out += ", ";
      out += json(fields[c].name).dump();
      out += ": ";
      const Value& v = ds.rows()[r][c];
      if (const auto* d = as_number(v)) out += format_number(*d, fields[c].display_precision);
      else if (const auto* s = as_string(v)) out += json(*s).dump();
      else out += "null";
    }
    out += '}';
  }
  out += ']';
  return out;
}

inline std::string serialize_annotation(const Annotation& a) {
  auto bracket = [](double lo, double hi) { return "[" + format_shortest(lo) + ", " + format_shortest(hi) + "]"; };
  if (const auto* m = std::get_if<MarkSelection>(&a)) {
    if (m->records.empty() || m->records.front().empty())
      throw Error(ErrorCode::EmptyAnnotation, "mark selection has no records");
    std::string out;
    for (std::size_t i = 0; i < m->records.size(); ++i) {
      if (m->records[i].empty()) throw Error(ErrorCode::EmptyAnnotation, "mark record has no fields");
      if (i) out += ", ";
      out += '{';
      bool first = true;
      for (const auto& [field, value] : m->records[i]) {
        if (!first) out += ", ";
        first = false;
        out += field + ": " + display(value);
      }
      out += '}';
    }
    return out;
  }
  if (const auto* r = std::get_if<AxisRange>(&a)) return "{" + r->field + " between " + bracket(r->lo, r->hi) + "}";
  const auto& l = std::get<LegendSelection>(a);
  if (l.range) return "{" + l.field + " between " + bracket(l.range->first, l.range->second) + "}";
  if (l.values.empty()) throw Error(ErrorCode::EmptyAnnotation, "legend selection for " + l.field + " has no values");
  std::string list;
  for (std::size_t i = 0; i < l.values.size(); ++i) {
    if (i) list += ", ";
    list += display(l.values[i]);
  }
  return "{" + l.field + " is one of [" + list + "]}";
}

/// Order-sensitive digest of the serialized annotations.
inline std::string annotation_fingerprint(const std::vector<std::string>& serialized) {
  std::string joined;
  for (const auto& s : serialized) {
    joined += s;
    joined += '\n';
  }
  return sha256_hex(joined);
}

inline PromptRecord compose_narrative_prompt(const ChartSpec& spec, const Dataset& ds,
                                             const std::vector<Annotation>& anns, const PromptOptions& opts = {}) {
  if (auto violations = validate_chart(spec, ds); !violations.empty())
    throw Error(ErrorCode::InvalidChart, violations.front());

  std::vector<std::string> fragments;
  for (const auto& a : anns) {
    (void)annotation_to_predicate(a);  // EmptyAnnotation before anything else
    if (auto violations = validate_annotation(a, spec, ds); !violations.empty())
      throw Error(ErrorCode::InvalidAnnotation, violations.front());
    fragments.push_back(serialize_annotation(canonicalize_annotation(a, spec, ds)));
  }

  const std::string data = serialize_rows(ds, spec);
  if (data.size() > opts.data_char_budget)
    throw Error(ErrorCode::DataTooLarge, "serialized data is " + std::to_string(data.size()) +
                                             " characters, budget is " + std::to_string(opts.data_char_budget));

  std::string text = "Write a narrative based on a ";
  text += chart_type_phrase(spec.chart_type);
  text += " showing the following data: ";
  text += data;
  text += " on the topic \"" + spec.title + "\"";
  if (!fragments.empty()) {
    text += ' ';
    text += to_string(opts.focus_verb);
    text += ":";
    for (std::size_t i = 0; i < fragments.size(); ++i) {
      text += i ? ", (" : " (";
      text += std::to_string(i + 1) + ") " + fragments[i];
    }
  }
  if (opts.include_no_names_directive) text += " Do not use people names.";

  return PromptRecord{std::move(text), PromptKind::narrative, spec.id, annotation_fingerprint(fragments), opts};
}

inline PromptRecord compose_title_prompt(std::string_view narrative, std::string chart_id = {},
                                         std::string fingerprint = {}) {
  if (narrative.empty()) throw Error(ErrorCode::EmptyNarrative, "cannot title an empty narrative");
  return PromptRecord{"Suggest a title for the following narrative: " + std::string(narrative), PromptKind::title,
                      std::move(chart_id), std::move(fingerprint), PromptOptions{}};
}

inline void to_json(json& j, const PromptOptions& o) {
  j = json{{"include_no_names_directive", o.include_no_names_directive},
           {"focus_verb", to_string(o.focus_verb)},
           {"data_char_budget", o.data_char_budget}};
}

inline void from_json(const json& j, PromptOptions& o) {
  o = PromptOptions{};
  if (j.contains("include_no_names_directive")) o.include_no_names_directive = j.at("include_no_names_directive").get<bool>();
  if (j.contains("focus_verb")) o.focus_verb = focus_verb_from_string(j.at("focus_verb").get<std::string>());
  if (j.contains("data_char_budget")) o.data_char_budget = j.at("data_char_budget").get<std::size_t>();
}

inline void to_json(json& j, const PromptRecord& p) {
  j = json{{"text", p.text},
           {"kind", p.kind == PromptKind::title ? "title" : "narrative"},
           {"chart_id", p.chart_id},
           {"annotation_fingerprint", p.annotation_fingerprint},
           {"options", p.options}};
}

inline void from_json(const json& j, PromptRecord& p) {
  p.text = j.at("text").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "title" && kind != "narrative") throw Error(ErrorCode::SchemaError, "unknown prompt kind " + kind);
  p.kind = kind == "title" ? PromptKind::title : PromptKind::narrative;
  p.chart_id = j.at("chart_id").get<std::string>();
  p.annotation_fingerprint = j.at("annotation_fingerprint").get<std::string>();
  p.options = j.at("options").get<PromptOptions>();
}

}  // namespace datatales
