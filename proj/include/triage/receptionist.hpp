#pragma once

#include <memory>

#include "triage/context.hpp"
#include "triage/dialog.hpp"
#include "triage/reason.hpp"
#include "triage/routing.hpp"

namespace triage::receptionist {

/// Everything the receptionist handlers read. Immutable once built.
struct Models {
  context::ContextModel context;
  reason::ReasonModel reason;
  routing::DepartmentMap departments;
  routing::RoutingPolicy policy;
  routing::RuleSet rules;
};

/// Handlers bound by the receptionist flow:
///   session_init       stores the session_start profile and prefilled slots
///   context_gate       asks for more detail until the gate passes or attempts run out
///   reason_prediction  top-3 reasons and department scores for the description
///   form_fill          asks for each missing required slot in turn
///   route              routing decision plus a hand-off message
void register_handlers(dialog::HandlerRegistry& registry, std::shared_ptr<const Models> models);

dialog::HandlerRegistry make_registry(std::shared_ptr<const Models> models);

}  // namespace triage::receptionist
