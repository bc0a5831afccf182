#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace triage::tabular {

using DenseVector = std::vector<double>;

enum class ColumnKind { categorical, numeric };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::vector<std::string> categories;  // declared categories, categorical only
};

/// Ordered column list; the order defines the encoded layout.
struct FeatureSchema {
  std::vector<Column> columns;

  const Column* find(const std::string& name) const;
  void validate() const;

  /// {"columns": [{"name": ..., "kind": "categorical"|"numeric", "categories": [...]}]}
  static FeatureSchema from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

using FeatureValue = std::variant<std::string, double>;

/// Sparse profile: absent keys are missing values.
struct TabularRecord {
  std::map<std::string, FeatureValue> values;

  bool operator==(const TabularRecord&) const = default;

  /// Strings stay categorical, numbers become numeric, booleans become "true"/"false".
  static TabularRecord from_json(const nlohmann::json& object);
  nlohmann::json to_json() const;
};

/// Throws schema_violation if a key is unknown or a value has the wrong kind.
void check_record(const FeatureSchema& schema, const TabularRecord& record);

struct ColumnTransform {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::size_t offset = 0;
  std::vector<std::string> categories;  // slot order; the unknown slot follows them
  double mean = 0.0;
  double stddev = 1.0;

  std::size_t width() const { return kind == ColumnKind::categorical ? categories.size() + 1 : 1; }

  bool operator==(const ColumnTransform&) const = default;
};

struct FittedTransform {
  std::vector<ColumnTransform> columns;
  std::size_t dimension = 0;

  FeatureSchema schema() const;
  nlohmann::json to_json() const;
  static FittedTransform from_json(const nlohmann::json& doc);

  bool operator==(const FittedTransform&) const = default;
};

FittedTransform fit(const FeatureSchema& schema, const std::vector<TabularRecord>& records);

DenseVector transform(const FittedTransform& fitted, const TabularRecord& record);

}  // namespace triage::tabular
