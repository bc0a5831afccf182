#include "triage/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "triage/error.hpp"

namespace triage::tabular {

namespace {

std::string kind_name(ColumnKind kind) { return kind == ColumnKind::categorical ? "categorical" : "numeric"; }

ColumnKind parse_kind(const std::string& name) {
  if (name == "categorical") return ColumnKind::categorical;
  if (name == "numeric") return ColumnKind::numeric;
  throw Error(ErrorCode::parse_error, "unknown column kind '" + name + "'");
}

}  // namespace

const Column* FeatureSchema::find(const std::string& name) const {
  for (const auto& column : columns) {
    if (column.name == name) return &column;
  }
  return nullptr;
}

void FeatureSchema::validate() const {
  std::set<std::string> seen;
  for (const auto& column : columns) {
    if (column.name.empty()) throw Error(ErrorCode::schema_violation, "column with empty name");
    if (!seen.insert(column.name).second) {
      throw Error(ErrorCode::schema_violation, "duplicate column '" + column.name + "'");
    }
    if (column.kind == ColumnKind::numeric && !column.categories.empty()) {
      throw Error(ErrorCode::schema_violation, "numeric column '" + column.name + "' declares categories");
    }
  }
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& doc) {
  FeatureSchema schema;
  try {
    for (const auto& entry : doc.at("columns")) {
      Column column;
      column.name = entry.at("name").get<std::string>();
      column.kind = parse_kind(entry.at("kind").get<std::string>());
      if (entry.contains("categories")) column.categories = entry.at("categories").get<std::vector<std::string>>();
      schema.columns.push_back(std::move(column));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("schema: ") + e.what());
  }
  schema.validate();
  return schema;
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json columns_json = nlohmann::json::array();
  for (const auto& column : columns) {
    nlohmann::json entry = {{"name", column.name}, {"kind", kind_name(column.kind)}};
    if (!column.categories.empty()) entry["categories"] = column.categories;
    columns_json.push_back(std::move(entry));
  }
  return {{"columns", std::move(columns_json)}};
}

TabularRecord TabularRecord::from_json(const nlohmann::json& object) {
  if (!object.is_object()) throw Error(ErrorCode::parse_error, "profile must be an object");
  TabularRecord record;
  for (const auto& [key, value] : object.items()) {
    if (value.is_null()) continue;
    if (value.is_boolean()) {
      record.values[key] = std::string(value.get<bool>() ? "true" : "false");
    } else if (value.is_number()) {
      record.values[key] = value.get<double>();
    } else if (value.is_string()) {
      record.values[key] = value.get<std::string>();
    } else {
      throw Error(ErrorCode::parse_error, "profile value for '" + key + "' must be scalar");
    }
  }
  return record;
}

nlohmann::json TabularRecord::to_json() const {
  nlohmann::json object = nlohmann::json::object();
  for (const auto& [key, value] : values) {
    std::visit([&](const auto& v) { object[key] = v; }, value);
  }
  return object;
}

void check_record(const FeatureSchema& schema, const TabularRecord& record) {
  for (const auto& [key, value] : record.values) {
    const Column* column = schema.find(key);
    if (column == nullptr) throw Error(ErrorCode::schema_violation, "unknown column '" + key + "'");
    const bool is_numeric = std::holds_alternative<double>(value);
    if (is_numeric != (column->kind == ColumnKind::numeric)) {
      throw Error(ErrorCode::schema_violation, "column '" + key + "' expects a " + kind_name(column->kind) + " value");
    }
    if (is_numeric && !std::isfinite(std::get<double>(value))) {
      throw Error(ErrorCode::schema_violation, "column '" + key + "' holds a non-finite number");
    }
  }
}

FeatureSchema FittedTransform::schema() const {
  FeatureSchema schema;
  for (const auto& column : columns) {
    schema.columns.push_back({column.name, column.kind, column.kind == ColumnKind::categorical ? column.categories
                                                                                             : std::vector<std::string>{}});
  }
  return schema;
}

nlohmann::json FittedTransform::to_json() const {
  nlohmann::json columns_json = nlohmann::json::array();
  for (const auto& column : columns) {
    nlohmann::json entry = {{"name", column.name}, {"kind", kind_name(column.kind)}, {"offset", column.offset}};
    if (column.kind == ColumnKind::categorical) {
      entry["categories"] = column.categories;
    } else {
      entry["mean"] = column.mean;
      entry["stddev"] = column.stddev;
    }
    columns_json.push_back(std::move(entry));
  }
  return {{"columns", std::move(columns_json)}, {"dimension", dimension}};
}

FittedTransform FittedTransform::from_json(const nlohmann::json& doc) {
  FittedTransform fitted;
  try {
    std::size_t offset = 0;
    for (const auto& entry : doc.at("columns")) {
      ColumnTransform column;
      column.name = entry.at("name").get<std::string>();
      column.kind = parse_kind(entry.at("kind").get<std::string>());
      column.offset = entry.at("offset").get<std::size_t>();
      if (column.kind == ColumnKind::categorical) {
        column.categories = entry.at("categories").get<std::vector<std::string>>();
      } else {
        column.mean = entry.at("mean").get<double>();
        column.stddev = entry.at("stddev").get<double>();
      }
      if (column.offset != offset) throw Error(ErrorCode::parse_error, "transform offsets are not contiguous");
      if (!(column.stddev > 0.0)) throw Error(ErrorCode::parse_error, "transform stddev must be positive");
      offset += column.width();
      fitted.columns.push_back(std::move(column));
    }
    fitted.dimension = doc.at("dimension").get<std::size_t>();
    if (fitted.dimension != offset) throw Error(ErrorCode::parse_error, "transform dimension mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("transform: ") + e.what());
  }
  return fitted;
}

FittedTransform fit(const FeatureSchema& schema, const std::vector<TabularRecord>& records) {
  if (records.empty()) throw Error(ErrorCode::empty_input, "cannot fit a transform on an empty training set");
  schema.validate();
  for (const auto& record : records) check_record(schema, record);

  FittedTransform fitted;
  std::size_t offset = 0;
  for (const auto& column : schema.columns) {
    ColumnTransform out;
    out.name = column.name;
    out.kind = column.kind;
    out.offset = offset;
    if (column.kind == ColumnKind::categorical) {
      out.categories = column.categories;
      std::set<std::string> known(out.categories.begin(), out.categories.end());
      for (const auto& record : records) {
        const auto it = record.values.find(column.name);
        if (it == record.values.end()) continue;
        const auto& category = std::get<std::string>(it->second);
        if (known.insert(category).second) out.categories.push_back(category);
      }
    } else {
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& record : records) {
        const auto it = record.values.find(column.name);
        if (it == record.values.end()) continue;
        sum += std::get<double>(it->second);
        ++count;
      }
      const double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
      double squares = 0.0;
      for (const auto& record : records) {
        const auto it = record.values.find(column.name);
        if (it == record.values.end()) continue;
        const double d = std::get<double>(it->second) - mean;
        squares += d * d;
      }
      const double stddev = count > 0 ? std::sqrt(squares / static_cast<double>(count)) : 0.0;
      out.mean = mean;
      out.stddev = stddev > 0.0 ? stddev : 1.0;
    }
    offset += out.width();
    fitted.columns.push_back(std::move(out));
  }
  fitted.dimension = offset;
  return fitted;
}

DenseVector transform(const FittedTransform& fitted, const TabularRecord& record) {
  DenseVector out(fitted.dimension, 0.0);
  for (const auto& column : fitted.columns) {
    const auto it = record.values.find(column.name);
    if (column.kind == ColumnKind::categorical) {
      std::size_t slot = column.categories.size();
      if (it != record.values.end()) {
        if (const auto* category = std::get_if<std::string>(&it->second)) {
          const auto pos = std::find(column.categories.begin(), column.categories.end(), *category);
          slot = static_cast<std::size_t>(pos - column.categories.begin());
        }
      }
      out[column.offset + slot] = 1.0;
    } else if (it != record.values.end()) {
      if (const auto* number = std::get_if<double>(&it->second)) {
        out[column.offset] = (*number - column.mean) / column.stddev;
      }
    }
  }
  return out;
}

}  // namespace triage::tabular
