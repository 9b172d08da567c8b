#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "datatales/csv.hpp"
#include "datatales/error.hpp"
#include "datatales/text_format.hpp"

namespace datatales {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Fields and values

enum class FieldKind { categorical, quantitative, temporal };

inline std::string_view to_string(FieldKind kind) {
  switch (kind) {
    case FieldKind::categorical: return "categorical";
    case FieldKind::quantitative: return "quantitative";
    case FieldKind::temporal: return "temporal";
  }
  return "categorical";
}

inline FieldKind field_kind_from_string(std::string_view s) {
  if (s == "categorical") return FieldKind::categorical;
  if (s == "quantitative") return FieldKind::quantitative;
  if (s == "temporal") return FieldKind::temporal;
  throw Error(ErrorCode::FormatError, "unknown field kind '" + std::string(s) + "'");
}

inline bool is_numeric_kind(FieldKind kind) { return kind != FieldKind::categorical; }

struct FieldDef {
  std::string name;
  FieldKind kind = FieldKind::categorical;
  int display_precision = 2;

  friend bool operator==(const FieldDef&, const FieldDef&) = default;
};

/// A cell: null, a number (quantitative/temporal) or a string (categorical).
using Value = std::variant<std::monostate, double, std::string>;

inline bool is_null(const Value& v) { return std::holds_alternative<std::monostate>(v); }
inline const double* as_number(const Value& v) { return std::get_if<double>(&v); }
inline const std::string* as_string(const Value& v) { return std::get_if<std::string>(&v); }

/// Plain rendering used in annotation text: strings verbatim, numbers shortest.
inline std::string display(const Value& v) {
  if (const auto* d = as_number(v)) return format_shortest(*d);
  if (const auto* s = as_string(v)) return *s;
  return "null";
}

inline bool values_equal(const Value& a, const Value& b) {
  if (is_null(a) || is_null(b)) return false;
  if (const auto* x = as_number(a)) {
    const auto* y = as_number(b);
    return y && nearly_equal(*x, *y);
  }
  const auto* y = as_string(b);
  return y && *as_string(a) == *y;
}

inline json value_to_json(const Value& v) {
  if (const auto* d = as_number(v)) {
    if (std::nearbyint(*d) == *d && std::fabs(*d) < 9e15) return static_cast<std::int64_t>(*d);
    return *d;
  }
  if (const auto* s = as_string(v)) return *s;
  return nullptr;
}

template <typename Json>
Value value_from_json(const Json& j) {
  if (j.is_null()) return std::monostate{};
  if (j.is_number()) return j.template get<double>();
  if (j.is_string()) return j.template get<std::string>();
  throw Error(ErrorCode::TypeError, "unsupported value " + j.dump());
}

/// Field/value pairs in a caller-chosen order.
using Record = std::vector<std::pair<std::string, Value>>;

// ---------------------------------------------------------------------------
// Dataset

class Dataset {
 public:
  Dataset() = default;

  /// Validates every invariant; rows must be aligned with `fields`.
  Dataset(std::string id, std::vector<FieldDef> fields, std::vector<std::vector<Value>> rows)
      : id_(std::move(id)), fields_(std::move(fields)), rows_(std::move(rows)) {
    std::set<std::string> seen;
    for (const auto& f : fields_) {
      if (f.name.empty()) throw Error(ErrorCode::FormatError, "empty field name");
      if (!seen.insert(f.name).second) throw Error(ErrorCode::FormatError, "duplicate field '" + f.name + "'");
      if (f.display_precision < 0) throw Error(ErrorCode::FormatError, "negative display precision for " + f.name);
    }
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      if (rows_[r].size() != fields_.size())
        throw Error(ErrorCode::FormatError, "row " + std::to_string(r) + " has " + std::to_string(rows_[r].size()) +
                                                " values, expected " + std::to_string(fields_.size()));
      for (std::size_t c = 0; c < fields_.size(); ++c) {
        const Value& v = rows_[r][c];
        if (is_null(v)) continue;
        const bool numeric = as_number(v) != nullptr;
        if (numeric != is_numeric_kind(fields_[c].kind))
          throw Error(ErrorCode::TypeError, "row " + std::to_string(r) + " field " + fields_[c].name +
                                                " does not match kind " + std::string(to_string(fields_[c].kind)));
      }
    }
  }

  const std::string& id() const { return id_; }
  const std::vector<FieldDef>& fields() const { return fields_; }
  const std::vector<std::vector<Value>>& rows() const { return rows_; }
  std::size_t row_count() const { return rows_.size(); }

  std::optional<std::size_t> field_index(std::string_view name) const {
    for (std::size_t i = 0; i < fields_.size(); ++i)
      if (fields_[i].name == name) return i;
    return std::nullopt;
  }

  const FieldDef* field(std::string_view name) const {
    auto i = field_index(name);
    return i ? &fields_[*i] : nullptr;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::string id_;
  std::vector<FieldDef> fields_;
  std::vector<std::vector<Value>> rows_;
};

/// Kind/precision overrides read from a `<dataset>.schema` sidecar.
struct FieldOverride {
  std::optional<FieldKind> kind;
  std::optional<int> display_precision;
};
using SchemaOverrides = std::map<std::string, FieldOverride>;

inline SchemaOverrides parse_schema_overrides(const std::string& text) {
  SchemaOverrides out;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("schema sidecar: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::FormatError, "schema sidecar must be an object");
  for (const auto& [name, spec] : j.items()) {
    FieldOverride o;
    if (spec.is_string()) {
      o.kind = field_kind_from_string(spec.get<std::string>());
    } else if (spec.is_object()) {
      if (spec.contains("kind")) o.kind = field_kind_from_string(spec.at("kind").get<std::string>());
      if (spec.contains("display_precision")) o.display_precision = spec.at("display_precision").get<int>();
    } else {
      throw Error(ErrorCode::FormatError, "schema entry for " + name + " must be a kind or an object");
    }
    out.emplace(name, o);
  }
  return out;
}

namespace detail {

inline bool name_suggests_time(std::string_view name) {
  const std::string lower = to_lower(name);
  return lower.find("year") != std::string::npos || lower.find("date") != std::string::npos;
}

// Builds a typed dataset from raw columns. A raw cell is either null, a string
// (from CSV or a JSON string) or a number (JSON only).
inline Dataset type_columns(std::string id, const std::vector<std::string>& names,
                            const std::vector<std::vector<Value>>& raw_rows, const SchemaOverrides& overrides) {
  for (const auto& [name, _] : overrides)
    if (std::find(names.begin(), names.end(), name) == names.end())
      throw Error(ErrorCode::FormatError, "schema names unknown field '" + name + "'");

  std::vector<FieldDef> fields;
  std::vector<std::vector<Value>> rows(raw_rows.size(), std::vector<Value>(names.size()));
  for (std::size_t c = 0; c < names.size(); ++c) {
    bool any = false, all_numeric = true, all_year_like = true, any_json_number = false;
    std::vector<std::optional<double>> parsed(raw_rows.size());
    for (std::size_t r = 0; r < raw_rows.size(); ++r) {
      const Value& cell = raw_rows[r][c];
      if (is_null(cell)) continue;
      any = true;
      if (const auto* d = as_number(cell)) {
        parsed[r] = *d;
        any_json_number = true;
      } else {
        parsed[r] = parse_number(*as_string(cell));
      }
      if (!parsed[r]) {
        all_numeric = false;
        continue;
      }
      const double v = *parsed[r];
      if (!(std::nearbyint(v) == v && v >= 1000 && v <= 2999)) all_year_like = false;
    }

    FieldDef def{names[c], FieldKind::categorical, 2};
    if (any && all_numeric) {
      def.kind = (all_year_like && name_suggests_time(names[c])) ? FieldKind::temporal : FieldKind::quantitative;
    }
    if (auto it = overrides.find(names[c]); it != overrides.end()) {
      if (it->second.kind) def.kind = *it->second.kind;
      if (it->second.display_precision) def.display_precision = *it->second.display_precision;
    }
    if (!is_numeric_kind(def.kind) && any_json_number && !all_numeric)
      throw Error(ErrorCode::TypeError, "field " + names[c] + " mixes numbers and non-numeric strings");

    for (std::size_t r = 0; r < raw_rows.size(); ++r) {
      const Value& cell = raw_rows[r][c];
      if (is_null(cell)) continue;
      if (is_numeric_kind(def.kind)) {
        if (!parsed[r])
          throw Error(ErrorCode::TypeError, "field " + names[c] + " row " + std::to_string(r) + ": '" + display(cell) +
                                                "' is not numeric");
        rows[r][c] = *parsed[r];
      } else if (const auto* d = as_number(cell)) {
        rows[r][c] = format_shortest(*d);
      } else {
        rows[r][c] = cell;
      }
    }
    fields.push_back(std::move(def));
  }
  return Dataset(std::move(id), std::move(fields), std::move(rows));
}

}  // namespace detail

/// CSV text with a header row. Empty cells are null.
inline Dataset parse_csv_dataset(std::string_view text, std::string id, const SchemaOverrides& overrides = {}) {
  auto table = csv::parse(text);
  if (table.empty()) throw Error(ErrorCode::FormatError, "missing header row");
  std::vector<std::string> names;
  for (auto& h : table.front()) names.emplace_back(trim(h));
  {
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (n.empty()) throw Error(ErrorCode::FormatError, "empty header name");
      if (!seen.insert(n).second) throw Error(ErrorCode::FormatError, "duplicate header '" + n + "'");
    }
  }
  std::vector<std::vector<Value>> raw;
  raw.reserve(table.size() - 1);
  for (std::size_t r = 1; r < table.size(); ++r) {
    if (table[r].size() != names.size())
      throw Error(ErrorCode::FormatError, "ragged row " + std::to_string(r) + ": " + std::to_string(table[r].size()) +
                                              " cells, header has " + std::to_string(names.size()));
    std::vector<Value> row;
    for (auto& cell : table[r]) {
      if (cell.empty()) row.emplace_back(std::monostate{});
      else row.emplace_back(std::move(cell));
    }
    raw.push_back(std::move(row));
  }
  return detail::type_columns(std::move(id), names, raw, overrides);
}

/// JSON array of flat objects; field order follows the first record's keys.
inline Dataset parse_json_dataset(std::string_view text, std::string id, const SchemaOverrides& overrides = {}) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("dataset json: ") + e.what());
  }
  if (!j.is_array()) throw Error(ErrorCode::FormatError, "dataset json must be an array of records");
  std::vector<std::string> names;
  std::vector<std::vector<Value>> raw;
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto& rec = j[r];
    if (!rec.is_object()) throw Error(ErrorCode::FormatError, "record " + std::to_string(r) + " is not an object");
    if (r == 0)
      for (const auto& [k, _] : rec.items()) names.push_back(k);
    if (rec.size() != names.size())
      throw Error(ErrorCode::FormatError, "record " + std::to_string(r) + " has a different field set");
    std::vector<Value> row;
    for (const auto& name : names) {
      auto it = rec.find(name);
      if (it == rec.end()) throw Error(ErrorCode::FormatError, "record " + std::to_string(r) + " lacks '" + name + "'");
      row.push_back(value_from_json(*it));
    }
    raw.push_back(std::move(row));
  }
  return detail::type_columns(std::move(id), names, raw, overrides);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoError, "error reading " + path.string());
  return ss.str();
}

/// Loads `.csv` or `.json` data; a sibling `<stem>.schema` file, when present,
/// overrides inferred kinds and display precision.
inline Dataset load_dataset(const std::filesystem::path& path, std::string id) {
  const std::string text = read_file(path);
  SchemaOverrides overrides;
  auto schema_path = path;
  schema_path.replace_extension(".schema");
  if (std::filesystem::exists(schema_path)) overrides = parse_schema_overrides(read_file(schema_path));
  if (to_lower(path.extension().string()) == ".json") return parse_json_dataset(text, std::move(id), overrides);
  return parse_csv_dataset(text, std::move(id), overrides);
}

/// Rows as list-of-records JSON, numbers rounded to each field's precision.
inline ordered_json dataset_rows_to_json(const Dataset& ds) {
  ordered_json rows = ordered_json::array();
  for (const auto& row : ds.rows()) {
    ordered_json rec = ordered_json::object();
    for (std::size_t c = 0; c < ds.fields().size(); ++c) {
      const Value& v = row[c];
      if (const auto* d = as_number(v)) rec[ds.fields()[c].name] = value_to_json(round_to(*d, ds.fields()[c].display_precision));
      else rec[ds.fields()[c].name] = value_to_json(v);
    }
    rows.push_back(std::move(rec));
  }
  return rows;
}

inline json fields_to_json(const Dataset& ds) {
  json out = json::array();
  for (const auto& f : ds.fields())
    out.push_back({{"name", f.name}, {"kind", to_string(f.kind)}, {"display_precision", f.display_precision}});
  return out;
}

// ---------------------------------------------------------------------------
// Chart specification

enum class ChartType { bar, stacked_bar, grouped_bar, line, multi_line, scatter, choropleth };
enum class Channel { x, y, color, detail, geo };

inline constexpr std::array<Channel, 5> kChannelOrder{Channel::x, Channel::y, Channel::color, Channel::detail,
                                                      Channel::geo};

inline std::string_view to_string(ChartType t) {
  switch (t) {
    case ChartType::bar: return "bar";
    case ChartType::stacked_bar: return "stacked_bar";
    case ChartType::grouped_bar: return "grouped_bar";
    case ChartType::line: return "line";
    case ChartType::multi_line: return "multi_line";
    case ChartType::scatter: return "scatter";
    case ChartType::choropleth: return "choropleth";
  }
  return "bar";
}

inline ChartType chart_type_from_string(std::string_view s) {
  for (auto t : {ChartType::bar, ChartType::stacked_bar, ChartType::grouped_bar, ChartType::line,
                 ChartType::multi_line, ChartType::scatter, ChartType::choropleth})
    if (to_string(t) == s) return t;
  throw Error(ErrorCode::FormatError, "unknown chart type '" + std::string(s) + "'");
}

inline std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::x: return "x";
    case Channel::y: return "y";
    case Channel::color: return "color";
    case Channel::detail: return "detail";
    case Channel::geo: return "geo";
  }
  return "x";
}

inline Channel channel_from_string(std::string_view s) {
  for (auto c : kChannelOrder)
    if (to_string(c) == s) return c;
  throw Error(ErrorCode::FormatError, "unknown channel '" + std::string(s) + "'");
}

struct ChartSpec {
  std::string id;
  ChartType chart_type = ChartType::bar;
  std::string title;
  std::map<Channel, std::string> encodings;
  std::string dataset_id;

  const std::string* field_for(Channel c) const {
    auto it = encodings.find(c);
    return it == encodings.end() ? nullptr : &it->second;
  }

  /// Channel order position of an encoded field, or nullopt.
  std::optional<std::size_t> channel_rank(std::string_view field) const {
    for (std::size_t i = 0; i < kChannelOrder.size(); ++i)
      if (const auto* f = field_for(kChannelOrder[i]); f && *f == field) return i;
    return std::nullopt;
  }

  friend bool operator==(const ChartSpec&, const ChartSpec&) = default;
};

inline std::vector<Channel> required_channels(ChartType t) {
  switch (t) {
    case ChartType::bar:
    case ChartType::line:
    case ChartType::scatter: return {Channel::x, Channel::y};
    case ChartType::stacked_bar:
    case ChartType::grouped_bar:
    case ChartType::multi_line: return {Channel::x, Channel::y, Channel::color};
    case ChartType::choropleth: return {Channel::geo, Channel::color};
  }
  return {};
}

/// Every violated ChartSpec invariant; empty means the spec is usable with `ds`.
inline std::vector<std::string> validate_chart(const ChartSpec& spec, const Dataset& ds) {
  std::vector<std::string> out;
  if (spec.dataset_id != ds.id())
    out.push_back("chart " + spec.id + " references dataset " + spec.dataset_id + " but was given " + ds.id());
  for (auto c : required_channels(spec.chart_type))
    if (!spec.field_for(c))
      out.push_back(std::string(to_string(spec.chart_type)) + " chart requires channel " + std::string(to_string(c)));
  if (spec.chart_type != ChartType::choropleth && spec.field_for(Channel::geo))
    out.push_back("channel geo is only valid for choropleth charts");
  for (const auto& [channel, field] : spec.encodings)
    if (!ds.field(field)) out.push_back("field " + field + " not in dataset (channel " + std::string(to_string(channel)) + ")");
  return out;
}

inline void to_json(json& j, const ChartSpec& s) {
  json enc = json::object();
  for (auto c : kChannelOrder)
    if (const auto* f = s.field_for(c)) enc[std::string(to_string(c))] = *f;
  j = json{{"id", s.id},
           {"chart_type", to_string(s.chart_type)},
           {"title", s.title},
           {"encodings", enc},
           {"dataset_id", s.dataset_id}};
}

inline void from_json(const json& j, ChartSpec& s) {
  try {
    s.id = j.at("id").get<std::string>();
    s.chart_type = chart_type_from_string(j.at("chart_type").get<std::string>());
    s.title = j.value("title", std::string{});
    s.dataset_id = j.at("dataset_id").get<std::string>();
    s.encodings.clear();
    for (const auto& [k, v] : j.at("encodings").items()) s.encodings[channel_from_string(k)] = v.get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("chart spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Annotations

/// Clicked marks; each record identifies one mark by encoded field values.
struct MarkSelection {
  std::vector<Record> records;
  friend bool operator==(const MarkSelection&, const MarkSelection&) = default;
};

/// Inclusive brush on a numeric axis.
struct AxisRange {
  std::string field;
  double lo = 0;
  double hi = 0;
  friend bool operator==(const AxisRange&, const AxisRange&) = default;
};

/// Color legend selection: a set of categories, or a continuous range.
struct LegendSelection {
  std::string field;
  std::vector<Value> values;
  std::optional<std::pair<double, double>> range;
  friend bool operator==(const LegendSelection&, const LegendSelection&) = default;
};

using Annotation = std::variant<MarkSelection, AxisRange, LegendSelection>;

inline std::string_view variant_name(const Annotation& a) {
  switch (a.index()) {
    case 0: return "mark_selection";
    case 1: return "axis_range";
    default: return "legend_selection";
  }
}

inline void to_json(json& j, const Annotation& a) {
  if (const auto* m = std::get_if<MarkSelection>(&a)) {
    json records = json::array();
    for (const auto& rec : m->records) {
      // Arrays of pairs keep record order, which object keys would not.
      json pairs = json::array();
      for (const auto& [k, v] : rec) pairs.push_back(json::array({k, value_to_json(v)}));
      records.push_back(std::move(pairs));
    }
    j = json{{"variant", "mark_selection"}, {"records", records}};
  } else if (const auto* r = std::get_if<AxisRange>(&a)) {
    j = json{{"variant", "axis_range"}, {"field", r->field}, {"range", {r->lo, r->hi}}};
  } else {
    const auto& l = std::get<LegendSelection>(a);
    j = json{{"variant", "legend_selection"}, {"field", l.field}};
    if (l.range) {
      j["range"] = {l.range->first, l.range->second};
    } else {
      json values = json::array();
      for (const auto& v : l.values) values.push_back(value_to_json(v));
      j["values"] = values;
    }
  }
}

namespace detail {
template <typename Json>
Record record_from_json(const Json& rec) {
  Record out;
  if (rec.is_object()) {
    for (const auto& [k, v] : rec.items()) out.emplace_back(k, value_from_json(v));
  } else if (rec.is_array()) {
    for (const auto& pair : rec) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string())
        throw Error(ErrorCode::FormatError, "mark record entries must be [field, value] pairs");
      out.emplace_back(pair[0].template get<std::string>(), value_from_json(pair[1]));
    }
  } else {
    throw Error(ErrorCode::FormatError, "mark record must be an object or a list of pairs");
  }
  return out;
}

template <typename Json>
std::pair<double, double> range_from_json(const Json& r) {
  if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number())
    throw Error(ErrorCode::FormatError, "range must be [lo, hi]");
  return {r[0].template get<double>(), r[1].template get<double>()};
}
}  // namespace detail

/// Accepts records either as objects (key order preserved when parsed with
/// ordered_json) or as [field, value] pair lists.
template <typename Json>
Annotation annotation_from_json(const Json& j) {
  try {
    const std::string variant = j.at("variant").template get<std::string>();
    if (variant == "mark_selection") {
      MarkSelection m;
      for (const auto& rec : j.at("records")) m.records.push_back(detail::record_from_json(rec));
      return m;
    }
    if (variant == "axis_range") {
      auto [lo, hi] = detail::range_from_json(j.at("range"));
      return AxisRange{j.at("field").template get<std::string>(), lo, hi};
    }
    if (variant == "legend_selection") {
      LegendSelection l;
      l.field = j.at("field").template get<std::string>();
      if (j.contains("range")) {
        l.range = detail::range_from_json(j.at("range"));
      } else {
        for (const auto& v : j.at("values")) l.values.push_back(value_from_json(v));
      }
      return l;
    }
    throw Error(ErrorCode::FormatError, "unknown annotation variant '" + variant + "'");
  } catch (const typename Json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("annotation: ") + e.what());
  }
}

inline void from_json(const json& j, Annotation& a) { a = annotation_from_json(j); }

/// Violations of the annotation invariants with respect to a chart and its data.
inline std::vector<std::string> validate_annotation(const Annotation& a, const ChartSpec& spec, const Dataset& ds) {
  std::vector<std::string> out;
  if (const auto* m = std::get_if<MarkSelection>(&a)) {
    if (m->records.empty()) out.push_back("mark selection is empty");
    for (const auto& rec : m->records) {
      if (rec.empty()) out.push_back("mark record is empty");
      for (const auto& [field, value] : rec) {
        if (!ds.field(field)) out.push_back("field " + field + " not in dataset");
        else if (!spec.channel_rank(field)) out.push_back("field " + field + " is not encoded in chart " + spec.id);
      }
    }
  } else if (const auto* r = std::get_if<AxisRange>(&a)) {
    const auto* f = ds.field(r->field);
    if (!f) out.push_back("field " + r->field + " not in dataset");
    else if (!is_numeric_kind(f->kind)) out.push_back("axis range field " + r->field + " is not quantitative or temporal");
    if (!(r->lo <= r->hi)) out.push_back("axis range lo exceeds hi");
  } else {
    const auto& l = std::get<LegendSelection>(a);
    const auto* color = spec.field_for(Channel::color);
    if (!color || *color != l.field) out.push_back("legend field " + l.field + " is not the color encoding");
    const auto* f = ds.field(l.field);
    if (!f) out.push_back("field " + l.field + " not in dataset");
    if (l.range) {
      if (f && !is_numeric_kind(f->kind)) out.push_back("legend range on non-numeric field " + l.field);
      if (!(l.range->first <= l.range->second)) out.push_back("legend range lo exceeds hi");
    } else if (l.values.empty()) {
      out.push_back("legend selection is empty");
    }
  }
  return out;
}

namespace detail {
inline Value coerce_to_kind(const Value& v, const FieldDef* f) {
  if (!f || is_null(v)) return v;
  if (is_numeric_kind(f->kind)) {
    if (const auto* s = as_string(v))
      if (auto d = parse_number(*s)) return *d;
    return v;
  }
  if (const auto* d = as_number(v)) return format_shortest(*d);
  return v;
}
}  // namespace detail

/// Puts mark record keys into channel order (x, y, color, detail, geo) and
/// coerces values to their field's kind. Other variants only get coercion.
inline Annotation canonicalize_annotation(const Annotation& a, const ChartSpec& spec, const Dataset& ds) {
  if (const auto* m = std::get_if<MarkSelection>(&a)) {
    MarkSelection out;
    for (auto rec : m->records) {
      std::stable_sort(rec.begin(), rec.end(), [&](const auto& l, const auto& r) {
        return spec.channel_rank(l.first).value_or(kChannelOrder.size()) <
               spec.channel_rank(r.first).value_or(kChannelOrder.size());
      });
      for (auto& [field, value] : rec) value = detail::coerce_to_kind(value, ds.field(field));
      out.records.push_back(std::move(rec));
    }
    return out;
  }
  if (const auto* l = std::get_if<LegendSelection>(&a)) {
    LegendSelection out = *l;
    for (auto& v : out.values) v = detail::coerce_to_kind(v, ds.field(l->field));
    return out;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Row predicates

struct EqualsClause {
  std::string field;
  Value value;
  friend bool operator==(const EqualsClause&, const EqualsClause&) = default;
};
struct OneOfClause {
  std::string field;
  std::vector<Value> values;
  friend bool operator==(const OneOfClause&, const OneOfClause&) = default;
};
struct RangeClause {
  std::string field;
  double lo = 0;
  double hi = 0;
  friend bool operator==(const RangeClause&, const RangeClause&) = default;
};

using Clause = std::variant<EqualsClause, OneOfClause, RangeClause>;
using Conjunction = std::vector<Clause>;
/// Disjunction of conjunctions. The empty set matches nothing.
using PredicateSet = std::vector<Conjunction>;

inline const std::string& clause_field(const Clause& c) {
  return std::visit([](const auto& x) -> const std::string& { return x.field; }, c);
}

inline PredicateSet annotation_to_predicate(const Annotation& a) {
  if (const auto* m = std::get_if<MarkSelection>(&a)) {
    if (m->records.empty()) throw Error(ErrorCode::EmptyAnnotation, "mark selection has no records");
    PredicateSet out;
    for (const auto& rec : m->records) {
      if (rec.empty()) throw Error(ErrorCode::EmptyAnnotation, "mark record has no fields");
      Conjunction conj;
      for (const auto& [field, value] : rec) conj.emplace_back(EqualsClause{field, value});
      out.push_back(std::move(conj));
    }
    return out;
  }
  if (const auto* r = std::get_if<AxisRange>(&a)) return {{RangeClause{r->field, r->lo, r->hi}}};
  const auto& l = std::get<LegendSelection>(a);
  if (l.range) return {{RangeClause{l.field, l.range->first, l.range->second}}};
  if (l.values.empty()) throw Error(ErrorCode::EmptyAnnotation, "legend selection for " + l.field + " has no values");
  return {{OneOfClause{l.field, l.values}}};
}

/// Union of the per-annotation predicates, used for combined highlighting.
inline PredicateSet annotations_to_predicate(const std::vector<Annotation>& anns) {
  PredicateSet out;
  for (const auto& a : anns) {
    auto p = annotation_to_predicate(a);
    out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return out;
}

inline bool clause_matches(const Clause& clause, const Value& cell) {
  if (is_null(cell)) return false;
  if (const auto* eq = std::get_if<EqualsClause>(&clause)) return values_equal(cell, eq->value);
  if (const auto* in = std::get_if<OneOfClause>(&clause))
    return std::any_of(in->values.begin(), in->values.end(), [&](const Value& v) { return values_equal(cell, v); });
  const auto& range = std::get<RangeClause>(clause);
  const auto* d = as_number(cell);
  return d && range.lo <= *d && *d <= range.hi;
}

/// Sorted indices of rows satisfying any conjunction.
inline std::vector<std::size_t> resolve_predicate(const PredicateSet& predicates, const Dataset& ds) {
  // Column index per clause, resolved once.
  std::vector<std::vector<std::size_t>> columns;
  for (const auto& conj : predicates) {
    std::vector<std::size_t> cols;
    for (const auto& clause : conj) {
      auto idx = ds.field_index(clause_field(clause));
      if (!idx) throw Error(ErrorCode::UnknownField, "unknown field " + clause_field(clause));
      cols.push_back(*idx);
    }
    columns.push_back(std::move(cols));
  }
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < ds.row_count(); ++r) {
    const auto& row = ds.rows()[r];
    for (std::size_t p = 0; p < predicates.size(); ++p) {
      bool all = true;
      for (std::size_t k = 0; k < predicates[p].size() && all; ++k)
        all = clause_matches(predicates[p][k], row[columns[p][k]]);
      if (all) {
        out.push_back(r);
        break;
      }
    }
  }
  return out;
}

inline void to_json(json& j, const Clause& c) {
  if (const auto* eq = std::get_if<EqualsClause>(&c)) {
    j = json{{"op", "eq"}, {"field", eq->field}, {"value", value_to_json(eq->value)}};
  } else if (const auto* in = std::get_if<OneOfClause>(&c)) {
    json values = json::array();
    for (const auto& v : in->values) values.push_back(value_to_json(v));
    j = json{{"op", "in"}, {"field", in->field}, {"values", values}};
  } else {
    const auto& r = std::get<RangeClause>(c);
    j = json{{"op", "between"}, {"field", r.field}, {"range", {r.lo, r.hi}}};
  }
}

inline void from_json(const json& j, Clause& c) {
  const std::string op = j.at("op").get<std::string>();
  const std::string field = j.at("field").get<std::string>();
  if (op == "eq") {
    c = EqualsClause{field, value_from_json(j.at("value"))};
  } else if (op == "in") {
    OneOfClause in{field, {}};
    for (const auto& v : j.at("values")) in.values.push_back(value_from_json(v));
    c = std::move(in);
  } else if (op == "between") {
    auto [lo, hi] = detail::range_from_json(j.at("range"));
    c = RangeClause{field, lo, hi};
  } else {
    throw Error(ErrorCode::SchemaError, "unknown clause op '" + op + "'");
  }
}

}  // namespace datatales
