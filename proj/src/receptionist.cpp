#include "triage/receptionist.hpp"

#include "triage/error.hpp"

namespace triage::receptionist {

using dialog::HandlerContext;
using dialog::HandlerResult;
using dialog::Outbound;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t\r\n") - first + 1);
}

const std::string& user_text(const HandlerContext& ctx) {
  if (ctx.event.kind != dialog::InboundEvent::Kind::user_message) {
    throw Error(ErrorCode::invalid_argument, "state '" + ctx.state + "' expects a user message");
  }
  return ctx.event.text;
}

HandlerResult session_init(const Models& models, const HandlerContext& ctx) {
  if (ctx.event.kind != dialog::InboundEvent::Kind::session_start) {
    throw Error(ErrorCode::invalid_argument, "the session has not started");
  }
  const auto& payload = ctx.event.payload;
  const json profile_doc = payload.is_object() ? payload.value("profile", json::object()) : json::object();
  const auto profile = tabular::TabularRecord::from_json(profile_doc);
  if (models.reason.transform) tabular::check_record(models.reason.transform->schema(), profile);

  HandlerResult r{"ok", {}, {}};
  r.slot_writes["profile"] = profile.to_json();
  if (payload.is_object() && payload.contains("slots")) {
    for (const auto& [key, value] : payload.at("slots").items()) {
      if (key == "profile") throw Error(ErrorCode::schema_violation, "'profile' cannot be prefilled");
      r.slot_writes[key] = value;
    }
  }
  return r;
}

HandlerResult context_gate(const Models& models, const HandlerContext& ctx) {
  const auto max_attempts = ctx.params.value("max_attempts", 2);
  json messages = ctx.memory.slots.value("messages", json::array());
  messages.push_back(user_text(ctx));
  std::string description;
  for (const auto& m : messages) {
    if (!description.empty()) description += ' ';
    description += m.get<std::string>();
  }
  const auto verdict = context::evaluate_context(models.context, description);
  const auto attempts = static_cast<int>(messages.size());

  HandlerResult r;
  r.slot_writes["messages"] = messages;
  r.slot_writes["description"] = description;
  r.slot_writes["context"] = {{"has_context", verdict.has_context}, {"p_positive", verdict.p_positive},
                              {"attempts", attempts}};
  if (verdict.has_context) {
    r.decision_key = "sufficient";
  } else if (attempts >= max_attempts) {
    r.decision_key = "exhausted";
  } else {
    r.decision_key = "insufficient";
  }
  return r;
}

HandlerResult reason_prediction(const Models& models, const HandlerContext& ctx) {
  const auto& slots = ctx.memory.slots;
  const auto description = slots.value("description", std::string{});
  const auto profile = tabular::TabularRecord::from_json(slots.value("profile", json::object()));
  const auto k = std::min<std::size_t>(ctx.params.value("top_k", 3), models.reason.labels.kept.size());
  const auto p = reason::predict_reasons(models.reason, {ctx.memory.session_id, description}, profile, k);
  const auto scores = routing::department_scores(p.probabilities, models.reason.labels.kept, models.departments);

  json top = json::array();
  for (const auto& [code, prob] : p.top) top.push_back({{"reason", code}, {"probability", prob}});
  json departments = json::object();
  for (const auto& [dept, s] : scores) departments[dept] = s;
  HandlerResult r{"predicted", {}, {}};
  r.slot_writes["prediction"] = {{"top_reasons", top}, {"departments", departments}};
  return r;
}

struct Field {
  std::string slot;
  std::string prompt;
};

std::vector<Field> required_fields(const json& params) {
  std::vector<Field> fields;
  for (const auto& f : params.value("required", json::array())) {
    fields.push_back({f.at("slot").get<std::string>(), f.at("prompt").get<std::string>()});
  }
  return fields;
}

bool filled(const json& slots, const std::string& key) {
  return slots.contains(key) && !(slots.at(key).is_null() || (slots.at(key).is_string() && slots.at(key).get<std::string>().empty()));
}

HandlerResult form_fill(const HandlerContext& ctx) {
  const auto fields = required_fields(ctx.params);
  json slots = ctx.memory.slots;
  HandlerResult r;
  if (ctx.params.value("capture", false)) {
    const auto answer = trim(user_text(ctx));
    for (const auto& f : fields) {
      if (filled(slots, f.slot)) continue;
      if (!answer.empty()) {
        r.slot_writes[f.slot] = answer;
        slots[f.slot] = answer;
      }
      break;
    }
  }
  for (const auto& f : fields) {
    if (!filled(slots, f.slot)) {
      r.decision_key = "ask";
      r.outbound.push_back(Outbound::message(f.prompt, slots));
      return r;
    }
  }
  r.decision_key = "complete";
  return r;
}

HandlerResult route(const Models& models, const HandlerContext& ctx) {
  const auto& slots = ctx.memory.slots;
  if (!slots.contains("prediction")) throw Error(ErrorCode::invalid_argument, "no reason prediction to route");
  const auto& prediction = slots.at("prediction");
  routing::DepartmentScores scores;
  for (const auto& [dept, s] : prediction.at("departments").items()) scores[dept] = s.get<double>();
  std::vector<std::pair<std::string, double>> top;
  for (const auto& t : prediction.at("top_reasons")) {
    top.emplace_back(t.at("reason").get<std::string>(), t.at("probability").get<double>());
  }
  const auto decision = routing::route(scores, top, models.policy, models.rules, slots);

  HandlerResult r{"routed", {}, {}};
  r.slot_writes["routing"] = decision.to_json();
  json subs = slots;
  subs["department"] = decision.department;
  r.outbound.push_back(Outbound::message(decision.auto_routed ? "handoff_auto" : "handoff_human", subs));
  r.outbound.push_back(Outbound::routing(decision.to_json()));
  return r;
}

}  // namespace

void register_handlers(dialog::HandlerRegistry& registry, std::shared_ptr<const Models> models) {
  if (!models) throw Error(ErrorCode::invalid_argument, "receptionist handlers need models");
  registry.add("session_init", [models](const HandlerContext& ctx) { return session_init(*models, ctx); });
  registry.add("context_gate", [models](const HandlerContext& ctx) { return context_gate(*models, ctx); });
  registry.add("reason_prediction", [models](const HandlerContext& ctx) { return reason_prediction(*models, ctx); });
  registry.add("form_fill", [](const HandlerContext& ctx) { return form_fill(ctx); });
  registry.add("route", [models](const HandlerContext& ctx) { return route(*models, ctx); });
}

dialog::HandlerRegistry make_registry(std::shared_ptr<const Models> models) {
  dialog::HandlerRegistry registry;
  register_handlers(registry, std::move(models));
  return registry;
}

}  // namespace triage::receptionist
