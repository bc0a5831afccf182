#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace triage::dialog {

using StateId = std::string;

/// Something that reached the engine from outside a session.
struct InboundEvent {
  enum class Kind { session_start, user_message };
  Kind kind = Kind::user_message;
  std::string text;
  nlohmann::json payload = nlohmann::json::object();
  std::int64_t timestamp = 0;

  bool operator==(const InboundEvent&) const = default;
};

struct HistoryEvent {
  enum class Kind { session_start, user_message, bot_message, handler_result };
  Kind kind = Kind::user_message;
  std::int64_t timestamp = 0;
  nlohmann::json data;

  bool operator==(const HistoryEvent&) const = default;
};

std::string to_string(HistoryEvent::Kind kind);

struct DialogMemory {
  std::string session_id;
  StateId state;
  nlohmann::json slots = nlohmann::json::object();
  std::vector<HistoryEvent> history;

  nlohmann::json to_json() const;
  static DialogMemory from_json(const nlohmann::json& doc);
  bool operator==(const DialogMemory&) const = default;
};

/// One thing a handler wants said or done, in order.
struct Outbound {
  enum class Kind { message, routing };
  Kind kind = Kind::message;
  std::string template_id;                                   // message
  nlohmann::json substitutions = nlohmann::json::object();  // message
  nlohmann::json payload;                                    // routing

  static Outbound message(std::string template_id, nlohmann::json substitutions = nlohmann::json::object());
  static Outbound routing(nlohmann::json payload);
};

struct HandlerResult {
  std::string decision_key;
  std::map<std::string, nlohmann::json> slot_writes;
  std::vector<Outbound> outbound;
};

struct StateSpec {
  std::string handler_name;
  std::map<std::string, StateId> transitions;
  std::optional<std::string> on_enter_template;
  bool await_input = true;  // false: runs as soon as it is entered
  nlohmann::json params = nlohmann::json::object();
};

struct HandlerContext {
  const DialogMemory& memory;
  const InboundEvent& event;
  const StateId& state;
  const nlohmann::json& params;
};

using Handler = std::function<HandlerResult(const HandlerContext&)>;

class HandlerRegistry {
 public:
  void add(const std::string& name, Handler handler);
  bool contains(const std::string& name) const;
  const Handler& at(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, Handler> handlers_;
};

struct FlowDefinition {
  std::string name;
  std::map<StateId, StateSpec> states;
  StateId initial_state;
  std::set<StateId> terminal_states;
  std::vector<std::string> warnings;  // unreachable states

  bool is_terminal(const StateId& state) const { return terminal_states.contains(state); }
  const StateSpec& at(const StateId& state) const;
};

/// {"initial_state": ..., "terminal_states": [...], "states": {"<id>": {"handler": ...,
/// "transitions": {"<decision>": "<id>"}, "on_enter": "<template>", "await_input": bool,
/// "params": {...}}}}. Terminal states need no handler.
FlowDefinition load_flow(const nlohmann::json& document, const HandlerRegistry& registry);
FlowDefinition load_flow(std::string_view text, const HandlerRegistry& registry);

struct Template {
  std::vector<std::string> variants;
  std::map<std::string, std::string> defaults;
};

struct TemplateStore {
  std::map<std::string, Template> templates;

  bool contains(const std::string& id) const { return templates.contains(id); }
  /// {"<id>": {"variants": [...], "defaults": {...}}} or {"<id>": ["variant", ...]}.
  static TemplateStore from_json(const nlohmann::json& doc);
};

/// Throws unknown_template if a state enters with a template the store lacks.
void check_templates(const FlowDefinition& flow, const TemplateStore& store);

/// Placeholders are `{identifier}`; any other brace is literal text.
std::string render_template(const TemplateStore& store, const std::string& template_id,
                            const nlohmann::json& substitutions, std::uint64_t variant_seed);

/// What the engine emits after a step: rendered messages and routing directives.
struct Action {
  enum class Kind { message, routing };
  Kind kind = Kind::message;
  std::string template_id;
  std::string text;
  nlohmann::json payload;

  bool operator==(const Action&) const = default;
};

struct StepResult {
  DialogMemory memory;
  std::vector<Action> actions;
};

struct Engine {
  const FlowDefinition& flow;
  const HandlerRegistry& registry;
  const TemplateStore& templates;
  std::uint64_t seed = 0;
};

DialogMemory initial_memory(const FlowDefinition& flow, const std::string& session_id);

/// Runs the current state's handler on `event`, follows the transition, then keeps
/// running states that do not await input. All writes land only if every handler
/// in the chain succeeds.
StepResult step(const DialogMemory& memory, const InboundEvent& event, const Engine& engine);

/// Inbound events recorded in the history, in order.
std::vector<InboundEvent> recorded_events(const DialogMemory& memory);

/// Feeds the recorded inbound events back through a fresh memory.
DialogMemory replay(const DialogMemory& memory, const Engine& engine);

}  // namespace triage::dialog
