#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/error.hpp"
#include "triage/routing.hpp"

namespace triage::eval {

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  void validate() const;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// Largest-remainder apportionment of n items over the three fractions.
SplitCounts split_counts(std::size_t n, const SplitSpec& spec);

template <typename T>
struct Split {
  std::vector<T> train;
  std::vector<T> val;
  std::vector<T> test;
};

/// Sorts by timestamp (stable for equal timestamps) and cuts into train, val,
/// test in chronological order. `timestamp_of` returns std::optional<int64_t>.
template <typename T, typename TimestampFn>
Split<T> out_of_time_split(std::vector<T> items, const SplitSpec& spec, TimestampFn timestamp_of) {
  spec.validate();
  std::vector<std::pair<std::int64_t, std::size_t>> keys;
  keys.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::optional<std::int64_t> ts = timestamp_of(items[i]);
    if (!ts) throw Error(ErrorCode::missing_timestamp, "item " + std::to_string(i) + " has no timestamp");
    keys.emplace_back(*ts, i);
  }
  std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const auto counts = split_counts(items.size(), spec);
  Split<T> out;
  for (std::size_t rank = 0; rank < keys.size(); ++rank) {
    auto& item = items[keys[rank].second];
    if (rank < counts.train) {
      out.train.push_back(std::move(item));
    } else if (rank < counts.train + counts.val) {
      out.val.push_back(std::move(item));
    } else {
      out.test.push_back(std::move(item));
    }
  }
  return out;
}

/// Fraction of rows whose truth is among the first k ranked labels.
double topk_accuracy(const std::vector<std::vector<std::string>>& ranked, std::span<const std::string> truths,
                     std::size_t k);

/// Department accuracy after summing reason probabilities per department.
double department_accuracy(const std::vector<std::vector<double>>& probabilities, std::span<const std::string> reasons,
                           const routing::DepartmentMap& map, std::span<const std::string> truth_departments,
                           std::size_t k);

struct TransferResult {
  std::optional<double> rate;  // empty when nothing was auto-routed
  double coverage = 0.0;
  std::size_t auto_routed = 0;
  std::size_t transferred = 0;
};

TransferResult transfer_rate(std::span<const routing::RoutingDecision> decisions,
                             std::span<const std::string> truth_departments);

// ---------------------------------------------------------------------------
// Hyperparameter search
// ---------------------------------------------------------------------------

struct Hyperparameter {
  enum class Kind { log_uniform, uniform, choice };
  std::string name;
  Kind kind = Kind::choice;
  double low = 0.0;
  double high = 0.0;
  std::vector<nlohmann::json> choices;
  std::size_t grid_points = 5;  // discretization of continuous ranges for grid search

  static Hyperparameter log_range(std::string name, double low, double high, std::size_t grid_points = 5);
  static Hyperparameter range(std::string name, double low, double high, std::size_t grid_points = 5);
  static Hyperparameter one_of(std::string name, std::vector<nlohmann::json> choices);

  std::vector<nlohmann::json> grid_values() const;
};

struct SearchSpace {
  std::vector<Hyperparameter> params;
  std::size_t budget = 100;

  void validate() const;
  std::size_t grid_size() const;
};

enum class SearchStrategy { grid, random };

struct TrialRecord {
  std::size_t index = 0;
  nlohmann::json config;
  std::optional<double> score;
  std::string error;
};

struct SearchResult {
  nlohmann::json best_config;
  double best_score = 0.0;
  std::vector<TrialRecord> trace;
};

using Objective = std::function<double(const nlohmann::json& config)>;

/// Evaluates at most `budget` configurations and keeps the first best one.
/// Configurations whose objective throws are recorded and skipped.
SearchResult search(const SearchSpace& space, const Objective& objective, SearchStrategy strategy,
                    std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

struct MetricReport {
  std::string model;
  double reason_top1 = 0.0;
  double reason_top3 = 0.0;
  double department_top1 = 0.0;
  double department_top3 = 0.0;
  std::optional<double> transfer_rate;
  double coverage = 0.0;
  std::map<std::string, std::size_t> support;
  std::string fingerprint;

  nlohmann::json to_json() const;
};

std::string fingerprint(const nlohmann::json& config);

std::string format_percent(double rate, int decimals);

/// Aligned text tables for the given metrics; when `baselines` holds reference
/// constants (see data/paper_reference.json) they are printed alongside.
std::string render_report(std::span<const MetricReport> metrics, const nlohmann::json& baselines);

/// Arithmetic consistency checks on the reference-constants file.
struct ReferenceCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};
std::vector<ReferenceCheck> verify_reference(const nlohmann::json& reference);

}  // namespace triage::eval
