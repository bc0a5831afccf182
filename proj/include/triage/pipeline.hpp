#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "triage/corpus.hpp"
#include "triage/evalsim.hpp"
#include "triage/reason.hpp"
#include "triage/routing.hpp"

namespace triage::pipeline {

struct PreparedData {
  eval::Split<corpus::Ticket> split;
  reason::ClassFilter filter;
  reason::FilterCounts train_counts;
  reason::FilterCounts validation_counts;
  reason::FilterCounts test_counts;

  nlohmann::json summary() const;
};

/// Out-of-time split, then the class filter counted on the training part and
/// applied to all three parts.
PreparedData prepare(std::vector<corpus::Ticket> tickets, const eval::SplitSpec& spec, std::size_t min_count);

/// The same out-of-time split, restricted to the labels a trained model kept.
eval::Split<corpus::Ticket> split_for_model(std::vector<corpus::Ticket> tickets, const eval::SplitSpec& spec,
                                            const reason::LabelCatalog& labels);

struct ScoredTicket {
  reason::Prediction prediction;  // top-3
  routing::DepartmentScores departments;
};

std::vector<ScoredTicket> score(const reason::ReasonModel& model, std::span<const corpus::Ticket> tickets,
                                const routing::DepartmentMap& map);

/// Threshold reaching `coverage` on the max department scores of `tickets`.
double calibrate(const std::vector<ScoredTicket>& scored, double coverage);

routing::RoutingDecision decide(const ScoredTicket& scored, const routing::RoutingPolicy& policy,
                                const routing::RuleSet& rules, const nlohmann::json& slots);

/// Reason and department accuracy plus routing metrics under `policy`.
eval::MetricReport evaluate(const std::string& name, const reason::ReasonModel& model,
                            std::span<const corpus::Ticket> tickets, const routing::DepartmentMap& map,
                            const routing::RoutingPolicy& policy, const routing::RuleSet& rules = {});

/// The last-automatic-message baseline: every ticket is routed, none to humans.
eval::MetricReport evaluate_heuristic(const std::string& name, std::span<const corpus::Ticket> tickets,
                                      const routing::HeuristicLookup& lookup);

}  // namespace triage::pipeline
