#include "triage/dialog.hpp"

#include <algorithm>
#include <deque>

#include "triage/error.hpp"
#include "triage/rng.hpp"

namespace triage::dialog {

using nlohmann::json;

namespace {

bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  const auto head = static_cast<unsigned char>(s.front());
  if (!(std::isalpha(head) || head == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c == '_'; });
}

HistoryEvent::Kind parse_kind(const std::string& name) {
  if (name == "session_start") return HistoryEvent::Kind::session_start;
  if (name == "user_message") return HistoryEvent::Kind::user_message;
  if (name == "bot_message") return HistoryEvent::Kind::bot_message;
  if (name == "handler_result") return HistoryEvent::Kind::handler_result;
  throw Error(ErrorCode::parse_error, "unknown history event kind '" + name + "'");
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string substitution_text(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  return value.dump(-1, ' ', false, json::error_handler_t::replace);
}

}  // namespace

std::string to_string(HistoryEvent::Kind kind) {
  switch (kind) {
    case HistoryEvent::Kind::session_start: return "session_start";
    case HistoryEvent::Kind::user_message: return "user_message";
    case HistoryEvent::Kind::bot_message: return "bot_message";
    case HistoryEvent::Kind::handler_result: return "handler_result";
  }
  return "unknown";
}

json DialogMemory::to_json() const {
  json events = json::array();
  for (const auto& e : history) events.push_back({{"kind", to_string(e.kind)}, {"ts", e.timestamp}, {"data", e.data}});
  return {{"session_id", session_id}, {"state", state}, {"slots", slots}, {"history", events}};
}

DialogMemory DialogMemory::from_json(const json& doc) {
  try {
    DialogMemory m;
    m.session_id = doc.at("session_id").get<std::string>();
    m.state = doc.at("state").get<std::string>();
    m.slots = doc.at("slots");
    if (!m.slots.is_object()) throw Error(ErrorCode::parse_error, "slots must be an object");
    for (const auto& e : doc.at("history")) {
      m.history.push_back({parse_kind(e.at("kind").get<std::string>()), e.at("ts").get<std::int64_t>(), e.at("data")});
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("dialog memory: ") + e.what());
  }
}

Outbound Outbound::message(std::string template_id, json substitutions) {
  Outbound o;
  o.kind = Kind::message;
  o.template_id = std::move(template_id);
  o.substitutions = std::move(substitutions);
  return o;
}

Outbound Outbound::routing(json payload) {
  Outbound o;
  o.kind = Kind::routing;
  o.payload = std::move(payload);
  return o;
}

void HandlerRegistry::add(const std::string& name, Handler handler) {
  if (name.empty() || !handler) throw Error(ErrorCode::invalid_argument, "handler needs a name and a callable");
  handlers_[name] = std::move(handler);
}

bool HandlerRegistry::contains(const std::string& name) const { return handlers_.contains(name); }

const Handler& HandlerRegistry::at(const std::string& name) const {
  const auto it = handlers_.find(name);
  if (it == handlers_.end()) throw Error(ErrorCode::unknown_handler, "no handler named '" + name + "'");
  return it->second;
}

std::vector<std::string> HandlerRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : handlers_) out.push_back(name);
  return out;
}

const StateSpec& FlowDefinition::at(const StateId& state) const {
  const auto it = states.find(state);
  if (it == states.end()) throw Error(ErrorCode::schema_violation, "state '" + state + "' is not part of the flow");
  return it->second;
}

FlowDefinition load_flow(const json& doc, const HandlerRegistry& registry) {
  FlowDefinition flow;
  try {
    if (!doc.is_object()) throw Error(ErrorCode::parse_error, "flow document must be an object");
    flow.name = doc.value("name", std::string{});
    flow.initial_state = doc.at("initial_state").get<std::string>();
    for (const auto& t : doc.value("terminal_states", json::array())) flow.terminal_states.insert(t.get<std::string>());
    const auto& states = doc.at("states");
    if (!states.is_object() || states.empty()) throw Error(ErrorCode::parse_error, "flow needs at least one state");
    for (const auto& [id, spec_doc] : states.items()) {
      StateSpec spec;
      spec.handler_name = spec_doc.value("handler", std::string{});
      if (spec_doc.contains("transitions")) {
        spec.transitions = spec_doc.at("transitions").get<std::map<std::string, std::string>>();
      }
      if (spec_doc.contains("on_enter")) spec.on_enter_template = spec_doc.at("on_enter").get<std::string>();
      spec.await_input = spec_doc.value("await_input", true);
      spec.params = spec_doc.value("params", json::object());
      flow.states.emplace(id, std::move(spec));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("flow: ") + e.what());
  }

  if (!flow.states.contains(flow.initial_state)) {
    throw Error(ErrorCode::dangling_transition, "initial state '" + flow.initial_state + "' is not declared");
  }
  for (const auto& t : flow.terminal_states) {
    if (!flow.states.contains(t)) throw Error(ErrorCode::dangling_transition, "terminal state '" + t + "' is not declared");
  }
  for (const auto& [id, spec] : flow.states) {
    if (flow.is_terminal(id)) {
      if (!spec.transitions.empty()) {
        throw Error(ErrorCode::schema_violation, "terminal state '" + id + "' has outgoing transitions");
      }
      continue;
    }
    if (!registry.contains(spec.handler_name)) {
      throw Error(ErrorCode::unknown_handler, "state '" + id + "' binds unknown handler '" + spec.handler_name + "'");
    }
    if (spec.transitions.empty()) throw Error(ErrorCode::schema_violation, "non-terminal state '" + id + "' has no transitions");
    for (const auto& [key, target] : spec.transitions) {
      if (key.empty()) throw Error(ErrorCode::schema_violation, "state '" + id + "' has an empty decision key");
      if (!flow.states.contains(target)) {
        throw Error(ErrorCode::dangling_transition,
                    "state '" + id + "' sends '" + key + "' to undeclared state '" + target + "'");
      }
    }
  }

  std::set<StateId> seen{flow.initial_state};
  std::deque<StateId> queue{flow.initial_state};
  while (!queue.empty()) {
    const auto id = queue.front();
    queue.pop_front();
    for (const auto& [_, target] : flow.states.at(id).transitions) {
      if (seen.insert(target).second) queue.push_back(target);
    }
  }
  for (const auto& [id, _] : flow.states) {
    if (!seen.contains(id)) flow.warnings.push_back("state '" + id + "' is unreachable from '" + flow.initial_state + "'");
  }
  return flow;
}

FlowDefinition load_flow(std::string_view text, const HandlerRegistry& registry) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("flow: ") + e.what());
  }
  return load_flow(doc, registry);
}

void check_templates(const FlowDefinition& flow, const TemplateStore& store) {
  for (const auto& [id, spec] : flow.states) {
    if (spec.on_enter_template && !store.contains(*spec.on_enter_template)) {
      throw Error(ErrorCode::unknown_template, "state '" + id + "' enters with unknown template '" +
                                                   *spec.on_enter_template + "'");
    }
  }
}

TemplateStore TemplateStore::from_json(const json& doc) {
  TemplateStore store;
  try {
    const auto& entries = doc.contains("templates") ? doc.at("templates") : doc;
    if (!entries.is_object()) throw Error(ErrorCode::parse_error, "templates must be an object");
    for (const auto& [id, entry] : entries.items()) {
      Template t;
      if (entry.is_array()) {
        t.variants = entry.get<std::vector<std::string>>();
      } else {
        t.variants = entry.at("variants").get<std::vector<std::string>>();
        t.defaults = entry.value("defaults", std::map<std::string, std::string>{});
      }
      if (t.variants.empty()) throw Error(ErrorCode::parse_error, "template '" + id + "' has no variants");
      store.templates.emplace(id, std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("templates: ") + e.what());
  }
  return store;
}

std::string render_template(const TemplateStore& store, const std::string& template_id, const json& substitutions,
                            std::uint64_t variant_seed) {
  const auto it = store.templates.find(template_id);
  if (it == store.templates.end()) throw Error(ErrorCode::unknown_template, "no template '" + template_id + "'");
  const auto& t = it->second;
  const auto& variant = t.variants[mix(variant_seed) % t.variants.size()];

  std::string out;
  out.reserve(variant.size());
  std::size_t i = 0;
  while (i < variant.size()) {
    if (variant[i] == '{') {
      const auto close = variant.find('}', i + 1);
      if (close != std::string::npos) {
        const auto name = std::string_view(variant).substr(i + 1, close - i - 1);
        if (is_identifier(name)) {
          const std::string key(name);
          if (substitutions.is_object() && substitutions.contains(key)) {
            out += substitution_text(substitutions.at(key));
          } else if (const auto d = t.defaults.find(key); d != t.defaults.end()) {
            out += d->second;
          } else {
            throw Error(ErrorCode::unresolved_placeholder,
                        "template '" + template_id + "' needs '" + key + "' and declares no default");
          }
          i = close + 1;
          continue;
        }
      }
    }
    out += variant[i++];
  }
  return out;
}

DialogMemory initial_memory(const FlowDefinition& flow, const std::string& session_id) {
  DialogMemory m;
  m.session_id = session_id;
  m.state = flow.initial_state;
  return m;
}

namespace {

void emit_message(DialogMemory& memory, std::vector<Action>& actions, const Engine& engine, const std::string& template_id,
                  const json& substitutions, std::int64_t ts) {
  const auto seed = stable_hash(memory.session_id + "#" + std::to_string(memory.history.size()), mix(engine.seed));
  Action a;
  a.kind = Action::Kind::message;
  a.template_id = template_id;
  a.text = render_template(engine.templates, template_id, substitutions, seed);
  memory.history.push_back({HistoryEvent::Kind::bot_message, ts, {{"template", template_id}, {"text", a.text}}});
  actions.push_back(std::move(a));
}

}  // namespace

StepResult step(const DialogMemory& memory, const InboundEvent& event, const Engine& engine) {
  const auto& flow = engine.flow;
  flow.at(memory.state);
  if (flow.is_terminal(memory.state)) {
    throw Error(ErrorCode::invalid_argument, "session '" + memory.session_id + "' already reached '" + memory.state + "'");
  }

  StepResult result{memory, {}};
  auto& next = result.memory;
  std::int64_t ts = event.timestamp;
  if (!next.history.empty()) ts = std::max(ts, next.history.back().timestamp);

  const bool start = event.kind == InboundEvent::Kind::session_start;
  next.history.push_back({start ? HistoryEvent::Kind::session_start : HistoryEvent::Kind::user_message, ts,
                          start ? json{{"payload", event.payload}} : json{{"text", event.text}}});

  std::size_t hops = 0;
  for (bool first = true;; first = false) {
    const auto& current = next.state;
    if (flow.is_terminal(current)) break;
    const auto& spec = flow.at(current);
    if (!first && spec.await_input) break;
    if (++hops > flow.states.size()) {
      throw Error(ErrorCode::dead_transition, "state '" + current + "' loops without waiting for input");
    }

    HandlerResult r;
    try {
      r = engine.registry.at(spec.handler_name)(HandlerContext{next, event, current, spec.params});
    } catch (const std::exception& e) {
      throw Error(ErrorCode::handler_failure, "handler '" + spec.handler_name + "' in state '" + current + "': " + e.what());
    }
    if (r.decision_key.empty()) {
      throw Error(ErrorCode::handler_failure, "handler '" + spec.handler_name + "' returned an empty decision");
    }
    for (const auto& [key, _] : r.slot_writes) {
      if (!is_identifier(key)) {
        throw Error(ErrorCode::handler_failure, "handler '" + spec.handler_name + "' wrote invalid slot key '" + key + "'");
      }
    }
    const auto target = spec.transitions.find(r.decision_key);
    if (target == spec.transitions.end()) {
      throw Error(ErrorCode::dead_transition,
                  "state '" + current + "' has no transition for decision '" + r.decision_key + "'");
    }

    json written = json::array();
    for (auto& [key, value] : r.slot_writes) {
      next.slots[key] = std::move(value);
      written.push_back(key);
    }
    next.history.push_back({HistoryEvent::Kind::handler_result, ts,
                            {{"state", current}, {"handler", spec.handler_name}, {"decision", r.decision_key},
                             {"writes", written}}});
    for (const auto& o : r.outbound) {
      if (o.kind == Outbound::Kind::message) {
        emit_message(next, result.actions, engine, o.template_id, o.substitutions, ts);
      } else {
        result.actions.push_back({Action::Kind::routing, {}, {}, o.payload});
      }
    }
    next.state = target->second;
    if (const auto& enter = flow.at(next.state).on_enter_template) emit_message(next, result.actions, engine, *enter, next.slots, ts);
  }
  return result;
}

std::vector<InboundEvent> recorded_events(const DialogMemory& memory) {
  std::vector<InboundEvent> events;
  for (const auto& h : memory.history) {
    if (h.kind == HistoryEvent::Kind::session_start) {
      events.push_back({InboundEvent::Kind::session_start, {}, h.data.at("payload"), h.timestamp});
    } else if (h.kind == HistoryEvent::Kind::user_message) {
      events.push_back({InboundEvent::Kind::user_message, h.data.at("text").get<std::string>(), json::object(), h.timestamp});
    }
  }
  return events;
}

DialogMemory replay(const DialogMemory& memory, const Engine& engine) {
  auto current = initial_memory(engine.flow, memory.session_id);
  for (const auto& e : recorded_events(memory)) current = step(current, e, engine).memory;
  return current;
}

}  // namespace triage::dialog
