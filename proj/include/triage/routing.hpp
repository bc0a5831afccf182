#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/tabular.hpp"

namespace triage::routing {

/// Total map from contact reason to the department that handles it.
struct DepartmentMap {
  std::map<std::string, std::string> reason_to_department;
  std::vector<std::string> departments;  // sorted, unique

  const std::string& department_of(const std::string& reason) const;
  /// Throws unmapped_reason unless every reason in `reasons` is mapped.
  void check_total(std::span<const std::string> reasons) const;

  /// {"departments": [...], "reasons": {"<reason>": "<department>", ...}}
  static DepartmentMap from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

/// Department id -> summed reason probability, ordered by department id.
using DepartmentScores = std::map<std::string, double>;

DepartmentScores department_scores(std::span<const double> probabilities, std::span<const std::string> reasons,
                                   const DepartmentMap& map);

/// Departments by descending score; equal scores ordered by ascending id.
std::vector<std::pair<std::string, double>> rank_departments(const DepartmentScores& scores);

/// Largest tau such that at least a `coverage` fraction of scores is >= tau,
/// i.e. the ceil(coverage * N)-th largest score.
double calibrate_threshold(std::span<const double> max_scores, double coverage);

struct RoutingPolicy {
  double coverage = 0.8;
  double threshold = 0.0;
  std::string fallback = "human_triage";

  nlohmann::json to_json() const;
  static RoutingPolicy from_json(const nlohmann::json& doc);
};

/// Predicate over the dialog slots. Slot names are dotted paths into the slot
/// object ("profile.is_registered_agent"); during routing the pseudo slots
/// "routing.max_score", "routing.department" and "routing.scores.<dept>" exist.
struct Condition {
  enum class Kind { equals, in_set, compare };
  Kind kind = Kind::equals;
  std::string slot;
  nlohmann::json value;               // equals
  std::vector<nlohmann::json> values;  // in_set
  std::string op;                     // compare: < <= > >= == !=
  double threshold = 0.0;             // compare

  bool matches(const nlohmann::json& slots) const;
};

struct Rule {
  enum class Action { override_department, force_human };
  std::string id;
  Condition condition;
  Action action = Action::override_department;
  std::string department;  // override target
};

/// Ordered rules; the first matching rule wins.
struct RuleSet {
  std::vector<Rule> rules;

  /// Throws schema_violation if a condition's root slot is not declared.
  void validate(std::span<const std::string> declared_slots) const;

  static RuleSet from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct RoutingDecision {
  std::string department;            // fallback queue when not auto-routed without a rule
  std::string predicted_department;  // argmax of the department scores
  bool auto_routed = false;
  double max_score = 0.0;
  double threshold = 0.0;
  std::vector<std::pair<std::string, double>> top_reasons;
  std::optional<std::string> rule_id;

  nlohmann::json to_json() const;
  static RoutingDecision from_json(const nlohmann::json& doc);
  bool operator==(const RoutingDecision&) const = default;
};

RoutingDecision route(const DepartmentScores& scores, std::vector<std::pair<std::string, double>> top_reasons,
                      const RoutingPolicy& policy, const RuleSet& rules, const nlohmann::json& slots);

/// Baseline router keyed on the type of the last automatic message.
struct HeuristicLookup {
  std::string feature = "last_auto_msg_type";
  std::map<std::string, std::string> message_to_department;
  std::string default_department;

  static HeuristicLookup from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

std::string heuristic_route(const tabular::TabularRecord& record, const HeuristicLookup& lookup);

}  // namespace triage::routing
