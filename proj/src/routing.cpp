#include "triage/routing.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "triage/error.hpp"

namespace triage::routing {

using nlohmann::json;

const std::string& DepartmentMap::department_of(const std::string& reason) const {
  const auto it = reason_to_department.find(reason);
  if (it == reason_to_department.end()) throw Error(ErrorCode::unmapped_reason, "reason '" + reason + "' has no department");
  return it->second;
}

void DepartmentMap::check_total(std::span<const std::string> reasons) const {
  for (const auto& reason : reasons) department_of(reason);
}

DepartmentMap DepartmentMap::from_json(const json& doc) {
  DepartmentMap map;
  try {
    std::set<std::string> departments;
    if (doc.contains("departments")) {
      for (const auto& d : doc.at("departments")) departments.insert(d.get<std::string>());
    }
    for (const auto& [reason, department] : doc.at("reasons").items()) {
      const auto dept = department.get<std::string>();
      if (doc.contains("departments") && !departments.contains(dept)) {
        throw Error(ErrorCode::schema_violation, "reason '" + reason + "' maps to undeclared department '" + dept + "'");
      }
      departments.insert(dept);
      map.reason_to_department[reason] = dept;
    }
    map.departments.assign(departments.begin(), departments.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("department map: ") + e.what());
  }
  return map;
}

json DepartmentMap::to_json() const {
  return {{"departments", departments}, {"reasons", reason_to_department}};
}

DepartmentScores department_scores(std::span<const double> probabilities, std::span<const std::string> reasons,
                                   const DepartmentMap& map) {
  if (probabilities.size() != reasons.size()) {
    throw Error(ErrorCode::dimension_mismatch, "probability vector and reason list differ in length");
  }
  DepartmentScores scores;
  for (std::size_t i = 0; i < reasons.size(); ++i) scores[map.department_of(reasons[i])] += probabilities[i];
  return scores;
}

std::vector<std::pair<std::string, double>> rank_departments(const DepartmentScores& scores) {
  std::vector<std::pair<std::string, double>> ranked(scores.begin(), scores.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return ranked;
}

double calibrate_threshold(std::span<const double> max_scores, double coverage) {
  if (max_scores.empty()) throw Error(ErrorCode::empty_input, "cannot calibrate on an empty score list");
  if (!(coverage > 0.0 && coverage <= 1.0)) throw Error(ErrorCode::invalid_argument, "coverage must be in (0, 1]");
  std::vector<double> sorted(max_scores.begin(), max_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double n = static_cast<double>(sorted.size());
  // ceil with a guard against 0.8 * 5 = 4.000000000000001
  auto needed = static_cast<std::size_t>(std::ceil(coverage * n - 1e-9));
  needed = std::clamp<std::size_t>(needed, 1, sorted.size());
  return sorted[needed - 1];
}

json RoutingPolicy::to_json() const {
  return {{"coverage", coverage}, {"threshold", threshold}, {"fallback", fallback}};
}

RoutingPolicy RoutingPolicy::from_json(const json& doc) {
  RoutingPolicy policy;
  try {
    policy.coverage = doc.at("coverage").get<double>();
    policy.threshold = doc.at("threshold").get<double>();
    policy.fallback = doc.value("fallback", policy.fallback);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("routing policy: ") + e.what());
  }
  if (!std::isfinite(policy.threshold)) throw Error(ErrorCode::parse_error, "routing threshold must be finite");
  if (!(policy.coverage > 0.0 && policy.coverage <= 1.0)) throw Error(ErrorCode::parse_error, "coverage must be in (0, 1]");
  return policy;
}

namespace {

const json* lookup_slot(const json& slots, const std::string& path) {
  const json* node = &slots;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto dot = path.find('.', start);
    const auto key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object()) return nullptr;
    const auto it = node->find(key);
    if (it == node->end()) return nullptr;
    node = &*it;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return node;
}

// Profile booleans are stored as "true"/"false" strings; let rules say either.
bool loosely_equal(const json& a, const json& b) {
  if (a == b) return true;
  if (a.is_boolean() && b.is_string()) return b.get<std::string>() == (a.get<bool>() ? "true" : "false");
  if (b.is_boolean() && a.is_string()) return a.get<std::string>() == (b.get<bool>() ? "true" : "false");
  if (a.is_number() && b.is_number()) return a.get<double>() == b.get<double>();
  return false;
}

Condition parse_condition(const json& doc) {
  Condition c;
  c.slot = doc.at("slot").get<std::string>();
  if (doc.contains("equals")) {
    c.kind = Condition::Kind::equals;
    c.value = doc.at("equals");
  } else if (doc.contains("in")) {
    c.kind = Condition::Kind::in_set;
    c.values = doc.at("in").get<std::vector<json>>();
  } else if (doc.contains("op")) {
    c.kind = Condition::Kind::compare;
    c.op = doc.at("op").get<std::string>();
    static const std::set<std::string> ops = {"<", "<=", ">", ">=", "==", "!="};
    if (!ops.contains(c.op)) throw Error(ErrorCode::parse_error, "unknown comparison '" + c.op + "'");
    c.threshold = doc.at("value").get<double>();
  } else {
    throw Error(ErrorCode::parse_error, "condition on '" + c.slot + "' needs equals, in, or op");
  }
  return c;
}

json condition_json(const Condition& c) {
  json doc = {{"slot", c.slot}};
  switch (c.kind) {
    case Condition::Kind::equals: doc["equals"] = c.value; break;
    case Condition::Kind::in_set: doc["in"] = c.values; break;
    case Condition::Kind::compare:
      doc["op"] = c.op;
      doc["value"] = c.threshold;
      break;
  }
  return doc;
}

}  // namespace

bool Condition::matches(const json& slots) const {
  const json* found = lookup_slot(slots, slot);
  if (found == nullptr || found->is_null()) return false;
  switch (kind) {
    case Kind::equals: return loosely_equal(*found, value);
    case Kind::in_set:
      return std::any_of(values.begin(), values.end(), [&](const json& v) { return loosely_equal(*found, v); });
    case Kind::compare: {
      if (!found->is_number()) return false;
      const double x = found->get<double>();
      if (op == "<") return x < threshold;
      if (op == "<=") return x <= threshold;
      if (op == ">") return x > threshold;
      if (op == ">=") return x >= threshold;
      if (op == "==") return x == threshold;
      return x != threshold;
    }
  }
  return false;
}

void RuleSet::validate(std::span<const std::string> declared_slots) const {
  std::set<std::string> ids;
  for (const auto& rule : rules) {
    if (!ids.insert(rule.id).second) throw Error(ErrorCode::schema_violation, "duplicate rule id '" + rule.id + "'");
    const auto root = rule.condition.slot.substr(0, rule.condition.slot.find('.'));
    if (root == "routing") continue;
    if (std::find(declared_slots.begin(), declared_slots.end(), root) == declared_slots.end()) {
      throw Error(ErrorCode::schema_violation, "rule '" + rule.id + "' references undeclared slot '" + root + "'");
    }
    if (rule.action == Rule::Action::override_department && rule.department.empty()) {
      throw Error(ErrorCode::schema_violation, "rule '" + rule.id + "' overrides to an empty department");
    }
  }
}

RuleSet RuleSet::from_json(const json& doc) {
  RuleSet set;
  try {
    for (const auto& entry : doc.at("rules")) {
      Rule rule;
      rule.id = entry.at("id").get<std::string>();
      rule.condition = parse_condition(entry.at("when"));
      const auto& action = entry.at("then");
      if (action.contains("department")) {
        rule.action = Rule::Action::override_department;
        rule.department = action.at("department").get<std::string>();
      } else if (action.value("force_human", false)) {
        rule.action = Rule::Action::force_human;
      } else {
        throw Error(ErrorCode::parse_error, "rule '" + rule.id + "' has no action");
      }
      set.rules.push_back(std::move(rule));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("rules: ") + e.what());
  }
  return set;
}

json RuleSet::to_json() const {
  json list = json::array();
  for (const auto& rule : rules) {
    json then = rule.action == Rule::Action::force_human ? json{{"force_human", true}}
                                                         : json{{"department", rule.department}};
    list.push_back({{"id", rule.id}, {"when", condition_json(rule.condition)}, {"then", then}});
  }
  return {{"rules", list}};
}

json RoutingDecision::to_json() const {
  json reasons = json::array();
  for (const auto& [reason, p] : top_reasons) reasons.push_back({{"reason", reason}, {"probability", p}});
  json doc = {{"department", department},
              {"predicted_department", predicted_department},
              {"auto_routed", auto_routed},
              {"score", max_score},
              {"threshold", threshold},
              {"top_reasons", reasons}};
  if (rule_id) doc["rule_id"] = *rule_id;
  return doc;
}

RoutingDecision RoutingDecision::from_json(const json& doc) {
  RoutingDecision d;
  d.department = doc.at("department").get<std::string>();
  d.predicted_department = doc.value("predicted_department", std::string{});
  d.auto_routed = doc.at("auto_routed").get<bool>();
  d.max_score = doc.at("score").get<double>();
  d.threshold = doc.at("threshold").get<double>();
  for (const auto& entry : doc.at("top_reasons")) {
    d.top_reasons.emplace_back(entry.at("reason").get<std::string>(), entry.at("probability").get<double>());
  }
  if (doc.contains("rule_id")) d.rule_id = doc.at("rule_id").get<std::string>();
  return d;
}

RoutingDecision route(const DepartmentScores& scores, std::vector<std::pair<std::string, double>> top_reasons,
                      const RoutingPolicy& policy, const RuleSet& rules, const json& slots) {
  RoutingDecision decision;
  decision.threshold = policy.threshold;
  decision.top_reasons = std::move(top_reasons);
  const auto ranked = rank_departments(scores);
  if (!ranked.empty()) {
    decision.predicted_department = ranked.front().first;
    decision.max_score = ranked.front().second;
  }
  const bool confident = !ranked.empty() && decision.max_score >= policy.threshold;

  json view = slots.is_object() ? slots : json::object();
  view["routing"] = {{"max_score", decision.max_score},
                     {"department", decision.predicted_department},
                     {"scores", json(scores)}};
  for (const auto& rule : rules.rules) {
    if (!rule.condition.matches(view)) continue;
    decision.rule_id = rule.id;
    if (rule.action == Rule::Action::force_human) {
      decision.department = policy.fallback;
      decision.auto_routed = false;
    } else {
      decision.department = rule.department;
      decision.auto_routed = confident;
    }
    return decision;
  }
  decision.auto_routed = confident;
  decision.department = confident ? decision.predicted_department : policy.fallback;
  return decision;
}

HeuristicLookup HeuristicLookup::from_json(const json& doc) {
  HeuristicLookup lookup;
  try {
    lookup.feature = doc.value("feature", lookup.feature);
    lookup.message_to_department = doc.at("mapping").get<std::map<std::string, std::string>>();
    lookup.default_department = doc.at("default_department").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("heuristic lookup: ") + e.what());
  }
  return lookup;
}

json HeuristicLookup::to_json() const {
  return {{"feature", feature}, {"mapping", message_to_department}, {"default_department", default_department}};
}

std::string heuristic_route(const tabular::TabularRecord& record, const HeuristicLookup& lookup) {
  const auto it = record.values.find(lookup.feature);
  if (it == record.values.end()) return lookup.default_department;
  const auto* message = std::get_if<std::string>(&it->second);
  if (message == nullptr) return lookup.default_department;
  const auto mapped = lookup.message_to_department.find(*message);
  return mapped == lookup.message_to_department.end() ? lookup.default_department : mapped->second;
}

}  // namespace triage::routing
