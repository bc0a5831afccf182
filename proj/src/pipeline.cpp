#include "triage/pipeline.hpp"

#include "triage/error.hpp"

namespace triage::pipeline {

using nlohmann::json;

json PreparedData::summary() const {
  json counts = json::object();
  for (const auto& [label, n] : filter.train_counts) counts[label] = n;
  return {{"train", {{"kept", train_counts.kept}, {"dropped", train_counts.dropped}}},
          {"validation", {{"kept", validation_counts.kept}, {"dropped", validation_counts.dropped}}},
          {"test", {{"kept", test_counts.kept}, {"dropped", test_counts.dropped}}},
          {"classes_before_filter", filter.catalog.reasons.size()},
          {"classes_after_filter", filter.catalog.kept.size()},
          {"min_count", filter.min_count},
          {"train_counts", counts}};
}

PreparedData prepare(std::vector<corpus::Ticket> tickets, const eval::SplitSpec& spec, std::size_t min_count) {
  PreparedData data;
  data.split = eval::out_of_time_split(std::move(tickets), spec,
                                       [](const corpus::Ticket& t) { return std::optional<std::int64_t>(t.timestamp); });
  std::vector<std::string> labels;
  labels.reserve(data.split.train.size());
  for (const auto& t : data.split.train) labels.push_back(t.reason);
  data.filter = reason::filter_classes(labels, min_count);
  data.train_counts = reason::drop_filtered(data.split.train, data.filter.catalog);
  data.validation_counts = reason::drop_filtered(data.split.val, data.filter.catalog);
  data.test_counts = reason::drop_filtered(data.split.test, data.filter.catalog);
  return data;
}

eval::Split<corpus::Ticket> split_for_model(std::vector<corpus::Ticket> tickets, const eval::SplitSpec& spec,
                                            const reason::LabelCatalog& labels) {
  auto split = eval::out_of_time_split(std::move(tickets), spec,
                                       [](const corpus::Ticket& t) { return std::optional<std::int64_t>(t.timestamp); });
  reason::drop_filtered(split.train, labels);
  reason::drop_filtered(split.val, labels);
  reason::drop_filtered(split.test, labels);
  return split;
}

std::vector<ScoredTicket> score(const reason::ReasonModel& model, std::span<const corpus::Ticket> tickets,
                                const routing::DepartmentMap& map) {
  map.check_total(model.labels.kept);
  std::vector<ScoredTicket> out;
  out.reserve(tickets.size());
  for (const auto& t : tickets) {
    ScoredTicket s;
    s.prediction = reason::predict_reasons(model, t, std::min<std::size_t>(3, model.labels.kept.size()));
    s.departments = routing::department_scores(s.prediction.probabilities, model.labels.kept, map);
    out.push_back(std::move(s));
  }
  return out;
}

double calibrate(const std::vector<ScoredTicket>& scored, double coverage) {
  std::vector<double> max_scores;
  max_scores.reserve(scored.size());
  for (const auto& s : scored) max_scores.push_back(routing::rank_departments(s.departments).front().second);
  return routing::calibrate_threshold(max_scores, coverage);
}

routing::RoutingDecision decide(const ScoredTicket& scored, const routing::RoutingPolicy& policy,
                                const routing::RuleSet& rules, const json& slots) {
  return routing::route(scored.departments, scored.prediction.top, policy, rules, slots);
}

eval::MetricReport evaluate(const std::string& name, const reason::ReasonModel& model,
                            std::span<const corpus::Ticket> tickets, const routing::DepartmentMap& map,
                            const routing::RoutingPolicy& policy, const routing::RuleSet& rules) {
  const auto scored = score(model, tickets, map);

  eval::MetricReport report;
  report.model = name;
  std::vector<std::vector<std::string>> reason_ranked, dept_ranked;
  std::vector<std::string> reason_truth, dept_truth;
  std::vector<routing::RoutingDecision> decisions;
  for (std::size_t i = 0; i < tickets.size(); ++i) {
    std::vector<std::string> ranked;
    for (const auto& [code, p] : scored[i].prediction.top) ranked.push_back(code);
    reason_ranked.push_back(std::move(ranked));
    std::vector<std::string> depts;
    for (const auto& [d, s] : routing::rank_departments(scored[i].departments)) depts.push_back(d);
    dept_ranked.push_back(std::move(depts));
    reason_truth.push_back(tickets[i].reason);
    dept_truth.push_back(tickets[i].department);
    json slots{{"profile", tickets[i].profile.to_json()}};
    decisions.push_back(decide(scored[i], policy, rules, slots));
    ++report.support[tickets[i].reason];
  }
  report.reason_top1 = eval::topk_accuracy(reason_ranked, reason_truth, 1);
  report.reason_top3 = eval::topk_accuracy(reason_ranked, reason_truth, 3);
  report.department_top1 = eval::topk_accuracy(dept_ranked, dept_truth, 1);
  report.department_top3 = eval::topk_accuracy(dept_ranked, dept_truth, 3);
  const auto transfer = eval::transfer_rate(decisions, dept_truth);
  report.transfer_rate = transfer.rate;
  report.coverage = transfer.coverage;
  json fp{{"labels", model.labels.to_json()}, {"threshold", policy.threshold}};
  fp["provider"] = model.provider ? model.provider->config() : json(nullptr);
  report.fingerprint = eval::fingerprint(fp);
  return report;
}

eval::MetricReport evaluate_heuristic(const std::string& name, std::span<const corpus::Ticket> tickets,
                                      const routing::HeuristicLookup& lookup) {
  if (tickets.empty()) throw Error(ErrorCode::empty_input, "no tickets to evaluate");
  eval::MetricReport report;
  report.model = name;
  std::vector<routing::RoutingDecision> decisions;
  std::vector<std::string> truth;
  std::vector<std::vector<std::string>> ranked;
  for (const auto& t : tickets) {
    routing::RoutingDecision d;
    d.department = routing::heuristic_route(t.profile, lookup);
    d.predicted_department = d.department;
    d.auto_routed = true;
    d.max_score = 1.0;
    decisions.push_back(d);
    ranked.push_back({d.department});
    truth.push_back(t.department);
    ++report.support[t.reason];
  }
  report.department_top1 = eval::topk_accuracy(ranked, truth, 1);
  report.department_top3 = report.department_top1;
  const auto transfer = eval::transfer_rate(decisions, truth);
  report.transfer_rate = transfer.rate;
  report.coverage = transfer.coverage;
  report.fingerprint = eval::fingerprint(lookup.to_json());
  return report;
}

}  // namespace triage::pipeline
