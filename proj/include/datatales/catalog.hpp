#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "datatales/data_model.hpp"

namespace datatales {

/// Datasets (`*.csv`, `*.json` in the data directory, id = file stem) and
/// chart specs (`*.json` in the charts directory). Immutable once loaded.
class Catalog {
 public:
  Catalog() = default;

  static Catalog load(const std::filesystem::path& data_dir, const std::filesystem::path& charts_dir) {
    Catalog c;
    if (!std::filesystem::is_directory(data_dir)) throw Error(ErrorCode::IoError, "no data directory " + data_dir.string());
    if (!std::filesystem::is_directory(charts_dir))
      throw Error(ErrorCode::IoError, "no charts directory " + charts_dir.string());
    for (const auto& path : sorted_files(data_dir)) {
      const auto ext = to_lower(path.extension().string());
      if (ext != ".csv" && ext != ".json") continue;
      const auto id = path.stem().string();
      if (c.datasets_.count(id)) throw Error(ErrorCode::FormatError, "two data files share id " + id);
      c.datasets_.emplace(id, load_dataset(path, id));
    }
    for (const auto& path : sorted_files(charts_dir)) {
      if (to_lower(path.extension().string()) != ".json") continue;
      ChartSpec spec;
      try {
        spec = json::parse(read_file(path)).get<ChartSpec>();
      } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
      }
      c.add_chart(std::move(spec));
    }
    return c;
  }

  void add_dataset(Dataset ds) {
    const std::string id = ds.id();
    datasets_.insert_or_assign(id, std::move(ds));
  }

  /// Rejects charts whose dataset is missing or whose encodings are invalid.
  void add_chart(ChartSpec spec) {
    auto ds = datasets_.find(spec.dataset_id);
    if (ds == datasets_.end()) throw Error(ErrorCode::UnknownDataset, "chart " + spec.id + " needs dataset " + spec.dataset_id);
    if (auto v = validate_chart(spec, ds->second); !v.empty())
      throw Error(ErrorCode::InvalidChart, "chart " + spec.id + ": " + v.front());
    if (charts_.count(spec.id)) throw Error(ErrorCode::DuplicateId, "duplicate chart id " + spec.id);
    const std::string id = spec.id;
    charts_.emplace(id, std::move(spec));
  }

  bool has_chart(const std::string& id) const { return charts_.count(id) > 0; }

  const ChartSpec& chart(const std::string& id) const {
    auto it = charts_.find(id);
    if (it == charts_.end()) throw Error(ErrorCode::UnknownChart, "unknown chart " + id);
    return it->second;
  }

  const Dataset& dataset(const std::string& id) const {
    auto it = datasets_.find(id);
    if (it == datasets_.end()) throw Error(ErrorCode::UnknownDataset, "unknown dataset " + id);
    return it->second;
  }

  const Dataset& dataset_for(const ChartSpec& spec) const { return dataset(spec.dataset_id); }

  const std::map<std::string, ChartSpec>& charts() const { return charts_; }
  const std::map<std::string, Dataset>& datasets() const { return datasets_; }

 private:
  static std::vector<std::filesystem::path> sorted_files(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::map<std::string, Dataset> datasets_;
  std::map<std::string, ChartSpec> charts_;
};

}  // namespace datatales
