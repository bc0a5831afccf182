#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdlib>
#include <thread>

#include "artifacts.hpp"
#include "triage/rng.hpp"

using namespace triage;
using namespace triage::service;
using triage::testing::deterministic_manager;
using triage::testing::trained_artifacts;
using nlohmann::json;

namespace {

const json tenant_profile = json::parse(R"({
  "last_auto_msg_type": "repair_update", "hours_since_last_auto_msg": 20, "last_ticket_reason": "none",
  "is_registered_agent": false, "is_photographer": false, "n_rented_as_owner": 0,
  "n_ended_contracts_as_tenant": 0, "n_active_contracts_as_tenant": 1, "active_visit_scheduled": false,
  "has_open_proposal": false, "account_age_days": 400
})");

Envelope start(const std::string& id, json profile = tenant_profile, json slots = {{"contact_name", "Ana"}}) {
  json payload{{"profile", std::move(profile)}};
  if (!slots.is_null()) payload["slots"] = std::move(slots);
  return {EnvelopeType::session_start, id, 0, payload};
}

Envelope say(const std::string& id, const std::string& text) {
  return {EnvelopeType::user_message, id, 0, {{"text", text}}};
}

std::vector<EnvelopeType> types(const std::vector<Envelope>& envelopes) {
  std::vector<EnvelopeType> out;
  for (const auto& e : envelopes) out.push_back(e.type);
  return out;
}

std::size_t count(const std::vector<Envelope>& envelopes, EnvelopeType type) {
  return static_cast<std::size_t>(
      std::count_if(envelopes.begin(), envelopes.end(), [&](const Envelope& e) { return e.type == type; }));
}

void append(std::vector<Envelope>& all, const std::vector<Envelope>& more) { all.insert(all.end(), more.begin(), more.end()); }

const std::string geladeira = "minha geladeira quebrou e o proprietário não responde";

}  // namespace

TEST_CASE("envelope round trip") {
  const Envelope e{EnvelopeType::bot_message, "s\n1", 12, {{"text", "linha 1\nlinha 2 \"aspas\" ç"}}};
  const auto line = to_line(e);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(parse_envelope(line) == e);

  const auto parsed = parse_envelope(R"({"type":"user_message","session_id":"a","extra":1,"payload":{"text":"x"}})");
  CHECK(parsed.ts == 0);
  CHECK(to_line(parsed).find("extra") == std::string::npos);
  CHECK(parse_envelope(R"({"type":"session_end","session_id":"a"})").payload == json::object());
}

TEST_CASE("malformed envelopes") {
  for (const auto* line : {"{", "[]", "42", R"({"session_id":"a"})", R"({"type":"hello","session_id":"a"})",
                           R"({"type":"user_message"})", R"({"type":"user_message","session_id":3})",
                           R"({"type":"user_message","session_id":"a","ts":1.5})",
                           R"({"type":"user_message","session_id":"a","payload":[1]})"}) {
    CAPTURE(line);
    CHECK_THROWS_WITH_AS(parse_envelope(line), doctest::Contains("bad_envelope"), Error);
  }
}

TEST_CASE("parse_bind") {
  CHECK(parse_bind("0.0.0.0:80") == std::pair<std::string, std::uint16_t>{"0.0.0.0", 80});
  CHECK(parse_bind(":7070").first == "127.0.0.1");
  CHECK_THROWS_AS(parse_bind("localhost"), Error);
  CHECK_THROWS_AS(parse_bind("localhost:99999"), Error);
  CHECK_THROWS_AS(parse_bind("localhost:7x"), Error);
}

TEST_CASE("default flow asks for context after a bare greeting") {
  const auto& a = trained_artifacts();
  auto registry = receptionist::make_registry(a.models);
  const auto flow = dialog::load_flow(io::load_json(a.config.flow), registry);
  const auto templates = dialog::TemplateStore::from_json(io::load_json(a.config.templates));
  const dialog::Engine engine{flow, registry, templates, 0};
  auto memory = dialog::initial_memory(flow, "s");
  memory = dialog::step(memory, {dialog::InboundEvent::Kind::session_start, {}, start("s").payload, 1}, engine).memory;
  CHECK(memory.state == "awaiting_message");
  const auto r = dialog::step(memory, {dialog::InboundEvent::Kind::user_message, "oi", {}, 2}, engine);
  CHECK(r.memory.state == "awaiting_context");
  REQUIRE(r.actions.size() == 1);
  CHECK(r.actions[0].template_id == "ask_context");
  CHECK(r.memory.slots.at("context").at("has_context") == false);
}

TEST_CASE("a descriptive first message is routed") {
  auto manager = deterministic_manager();
  const auto opened = manager->handle(start("s"));
  CHECK(types(opened) == std::vector{EnvelopeType::bot_message});
  CHECK(opened[0].payload.at("template") == "greeting");

  const auto out = manager->handle(say("s", geladeira));
  REQUIRE(out.size() == 3);
  CHECK(out[0].type == EnvelopeType::bot_message);
  CHECK(out[1].type == EnvelopeType::routing_decision);
  CHECK(out[2].type == EnvelopeType::session_end);
  const auto decision = routing::RoutingDecision::from_json(out[1].payload);
  CHECK(decision.predicted_department == "maintenance");
  CHECK(decision.top_reasons.size() == 3);
  CHECK(decision.top_reasons[0].first == "mn_reparo_urgente");
  CHECK(decision.auto_routed == (decision.max_score >= decision.threshold));
  CHECK(out[0].payload.at("template") == (decision.auto_routed ? "handoff_auto" : "handoff_human"));
  CHECK(manager->active_sessions() == 0);

  const auto after = manager->handle(say("s", "mais uma coisa"));
  REQUIRE(after.size() == 1);
  CHECK(after[0].payload.at("code") == "unknown_session");
}

TEST_CASE("a bare greeting gets a request for details and no routing") {
  auto manager = deterministic_manager();
  manager->handle(start("s"));
  const auto out = manager->handle(say("s", "oi"));
  REQUIRE(out.size() == 1);
  CHECK(out[0].type == EnvelopeType::bot_message);
  CHECK(out[0].payload.at("template") == "ask_context");
  CHECK(manager->snapshot("s")->state == "awaiting_context");
}

TEST_CASE("the ask loop gives up after the configured attempts") {
  auto manager = deterministic_manager();
  std::vector<Envelope> all = manager->handle(start("s"));
  for (int i = 0; i < 3; ++i) append(all, manager->handle(say("s", "oi")));
  CHECK(count(all, EnvelopeType::routing_decision) == 1);
  CHECK(all.back().type == EnvelopeType::session_end);
  CHECK(count(all, EnvelopeType::bot_message) == 4);  // greeting, two asks, hand-off
}

TEST_CASE("a malformed line yields bad_envelope and the session carries on") {
  auto manager = deterministic_manager();
  manager->handle(start("s"));
  const auto bad = manager->handle_line("{");
  REQUIRE(bad.size() == 1);
  CHECK(bad[0].type == EnvelopeType::error);
  CHECK(bad[0].payload.at("code") == "bad_envelope");
  const auto good = manager->handle_line(to_line(say("s", "oi")));
  REQUIRE(good.size() == 1);
  CHECK(good[0].payload.at("template") == "ask_context");

  const auto server_only = manager->handle({EnvelopeType::routing_decision, "s", 0, json::object()});
  CHECK(server_only[0].payload.at("code") == "bad_envelope");
  const auto no_text = manager->handle({EnvelopeType::user_message, "s", 0, {{"text", 3}}});
  CHECK(no_text[0].payload.at("code") == "bad_envelope");
  CHECK(manager->snapshot("s")->state == "awaiting_context");
}

TEST_CASE("form filling asks for missing data") {
  auto manager = deterministic_manager();
  manager->handle(start("s", tenant_profile, nullptr));
  const auto asked = manager->handle(say("s", geladeira));
  REQUIRE(asked.size() == 1);
  CHECK(asked[0].payload.at("template") == "ask_name");
  CHECK(manager->snapshot("s")->state == "awaiting_field");
  const auto again = manager->handle(say("s", "   "));
  REQUIRE(again.size() == 1);
  CHECK(again[0].payload.at("template") == "ask_name");
  const auto done = manager->handle(say("s", " Bia "));
  REQUIRE(done.size() == 3);
  CHECK(done[0].payload.at("text").get<std::string>().find("Bia") != std::string::npos);
  CHECK(done[1].type == EnvelopeType::routing_decision);
}

TEST_CASE("session lifecycle errors") {
  auto manager = deterministic_manager();
  CHECK(manager->handle(say("ghost", "oi"))[0].payload.at("code") == "unknown_session");
  manager->handle(start("s"));
  CHECK(manager->handle(start("s"))[0].type == EnvelopeType::error);
  const auto closed = manager->handle({EnvelopeType::session_end, "s", 0, json::object()});
  REQUIRE(closed.size() == 1);
  CHECK(closed[0].type == EnvelopeType::session_end);
  CHECK(closed[0].payload.at("reason") == "client_closed");
  CHECK(manager->handle(say("s", "oi"))[0].payload.at("code") == "unknown_session");
  CHECK(manager->handle(start(""))[0].payload.at("code") == "bad_envelope");

  const auto bad_profile = manager->handle(start("p", {{"favourite_colour", "blue"}}));
  REQUIRE(bad_profile.size() == 1);
  CHECK(bad_profile[0].payload.at("code") == "handler_failure");
  CHECK(bad_profile[0].payload.at("message").get<std::string>().find("favourite_colour") != std::string::npos);
  CHECK(manager->handle(start("p"))[0].type == EnvelopeType::bot_message);
}

TEST_CASE("profile changes the predicted reason for the same message") {
  auto manager = deterministic_manager();
  const json photographer{{"is_photographer", true}, {"is_registered_agent", false}, {"active_visit_scheduled", false},
                          {"last_auto_msg_type", "partner_schedule"}};
  const json prospective{{"is_photographer", false}, {"is_registered_agent", false}, {"active_visit_scheduled", true},
                         {"last_auto_msg_type", "visit_reminder"}};
  std::vector<std::string> top;
  for (const auto& [id, profile] : {std::pair{"f", photographer}, std::pair{"t", prospective}}) {
    manager->handle(start(id, profile));
    const auto out = manager->handle(say(id, "preciso cancelar a visita de amanhã"));
    REQUIRE(count(out, EnvelopeType::routing_decision) == 1);
    for (const auto& e : out) {
      if (e.type == EnvelopeType::routing_decision) top.push_back(e.payload.at("top_reasons")[0].at("reason"));
    }
  }
  CHECK(top == std::vector<std::string>{"ft_ag_alteracao", "vi_cancelamento"});
}

TEST_CASE("registered agents follow the override rule") {
  auto manager = deterministic_manager();
  auto profile = tenant_profile;
  profile["is_registered_agent"] = true;
  manager->handle(start("s", profile));
  const auto out = manager->handle(say("s", geladeira));
  REQUIRE(out.size() == 3);
  const auto decision = routing::RoutingDecision::from_json(out[1].payload);
  CHECK(decision.department == "partners");
  CHECK(decision.rule_id == "registered_agents_to_partners");
}

TEST_CASE("sessions are isolated") {
  const std::vector<std::vector<Envelope>> scripts = {
      {start("a"), say("a", "oi"), say("a", geladeira)},
      {start("b", tenant_profile, nullptr), say("b", "quero cancelar meu contrato de aluguel"), say("b", "Caio")},
      {start("c"), say("c", "oi"), say("c", "oi"), say("c", "bom dia")},
  };
  const auto run_alone = [](const std::vector<Envelope>& script) {
    std::vector<std::string> lines;
    auto manager = deterministic_manager();
    for (const auto& e : script) {
      for (const auto& r : manager->handle(e)) lines.push_back(to_line(r));
    }
    return lines;
  };
  const auto suffixed = [](std::vector<Envelope> script, int copy) {
    for (auto& e : script) e.session_id += std::to_string(copy);
    return script;
  };
  std::map<std::string, std::vector<std::string>> alone;
  for (const auto& script : scripts) alone[script[0].session_id] = run_alone(script);

  std::map<std::string, std::vector<std::string>> interleaved;
  auto manager = deterministic_manager();
  for (std::size_t i = 0; i < 4; ++i) {
    for (const auto& script : scripts) {
      if (i >= script.size()) continue;
      for (const auto& r : manager->handle(script[i])) interleaved[r.session_id].push_back(to_line(r));
    }
  }
  CHECK(interleaved == alone);

  std::map<std::string, std::vector<std::string>> threaded;
  std::mutex mutex;
  auto shared = deterministic_manager();
  std::vector<std::thread> workers;
  for (int copy = 0; copy < 8; ++copy) {
    workers.emplace_back([&, copy] {
      for (const auto& script : scripts) {
        for (const auto& e : suffixed(script, copy)) {
          const auto replies = shared->handle(e);
          std::lock_guard lock(mutex);
          for (const auto& r : replies) threaded[r.session_id].push_back(to_line(r));
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  for (int copy = 0; copy < 8; ++copy) {
    for (const auto& script : scripts) {
      const auto own = suffixed(script, copy);
      CHECK(threaded[own[0].session_id] == run_alone(own));
    }
  }
}

TEST_CASE("replaying a session's history reproduces its memory") {
  const auto& a = trained_artifacts();
  auto registry = receptionist::make_registry(a.models);
  const auto flow = dialog::load_flow(io::load_json(a.config.flow), registry);
  const auto templates = dialog::TemplateStore::from_json(io::load_json(a.config.templates));
  const dialog::Engine engine{flow, registry, templates, 5};
  auto memory = dialog::initial_memory(flow, "r");
  memory = dialog::step(memory, {dialog::InboundEvent::Kind::session_start, {}, start("r", tenant_profile, nullptr).payload, 1}, engine).memory;
  for (const auto* text : {"oi", "tem um problema", geladeira.c_str(), "Rui"}) {
    memory = dialog::step(memory, {dialog::InboundEvent::Kind::user_message, text, {}, 2}, engine).memory;
  }
  CHECK(memory.state == "end");
  CHECK(dialog::replay(memory, engine) == memory);
}

TEST_CASE("emitted envelopes re-parse and arbitrary bytes never crash the reader") {
  auto manager = deterministic_manager();
  const std::vector<std::string> seeds = {to_line(start("z")), to_line(say("z", "oi")), to_line(say("z", geladeira)),
                                          R"({"type":"session_end","session_id":"z"})"};
  Rng rng(2024);
  std::size_t responses = 0;
  for (int i = 0; i < 3000; ++i) {
    std::string line;
    if (i % 3 == 0) {
      const auto n = rng.below(64);
      for (std::size_t j = 0; j < n; ++j) line += static_cast<char>(rng.below(256));
    } else {
      line = rng.pick(seeds);
      const auto edits = 1 + rng.below(4);
      for (std::size_t j = 0; j < edits && !line.empty(); ++j) {
        const auto pos = rng.below(line.size());
        switch (rng.below(3)) {
          case 0: line[pos] = static_cast<char>(rng.below(256)); break;
          case 1: line.erase(pos, 1 + rng.below(5)); break;
          default: line.insert(pos, 1, static_cast<char>(rng.below(256)));
        }
      }
    }
    std::vector<Envelope> out;
    REQUIRE_NOTHROW(out = manager->handle_line(line));
    REQUIRE(!out.empty());
    for (const auto& e : out) {
      REQUIRE(parse_envelope(to_line(e)) == e);
      ++responses;
    }
  }
  CHECK(responses >= 3000);
}

namespace {

std::string golden_check(const std::string& name) {
  const auto input = io::read_file(testing::source_path("tests/golden/" + name + ".in.jsonl"));
  const auto golden_path = testing::source_path("tests/golden/" + name + ".out.jsonl");
  auto manager = deterministic_manager();
  const auto transcript = testing::run_transcript(*manager, input);
  if (const char* update = std::getenv("UPDATE_GOLDEN"); update != nullptr && std::string(update) == "1") {
    io::write_file(golden_path, transcript);
  }
  REQUIRE(std::filesystem::exists(golden_path));
  CHECK(transcript == io::read_file(golden_path));
  auto second = deterministic_manager();
  CHECK(testing::run_transcript(*second, input) == transcript);
  return transcript;
}

std::vector<EnvelopeType> transcript_types(const std::string& transcript) {
  std::vector<EnvelopeType> kinds;
  std::istringstream lines(transcript);
  for (std::string line; std::getline(lines, line);) kinds.push_back(parse_envelope(line).type);
  return kinds;
}

}  // namespace

TEST_CASE("golden transcript") {
  const auto transcript = golden_check("session");
  CHECK(transcript_types(transcript) == std::vector{EnvelopeType::bot_message, EnvelopeType::bot_message,
                                                    EnvelopeType::bot_message, EnvelopeType::routing_decision,
                                                    EnvelopeType::session_end});
}

TEST_CASE("golden protocol transcript") {
  using enum EnvelopeType;
  const auto transcript = golden_check("protocol");
  CHECK(transcript_types(transcript) == std::vector{error, error, bot_message, bot_message, bot_message, routing_decision,
                                                    session_end, bot_message, bot_message, error, session_end});
}

TEST_CASE("non-deterministic mode stamps wall-clock time") {
  ServiceOptions options;
  auto manager = make_manager(trained_artifacts().config, options);
  const auto out = manager->handle(start("s"));
  CHECK(out[0].ts > 1600000000000);
}

TEST_CASE("the service refuses to start without its models") {
  auto config = trained_artifacts().config;
  config.reason_model = "/nonexistent/reason";
  CHECK_THROWS_AS(make_manager(config, {}), Error);
  config = trained_artifacts().config;
  config.flow = testing::source_path("config/templates.json");
  CHECK_THROWS_AS(make_manager(config, {}), Error);
}

namespace {

struct Client {
  int fd = -1;
  std::string pending;

  explicit Client(std::uint16_t port) {
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  }
  ~Client() { ::close(fd); }

  void send(const std::string& text) { REQUIRE(::send(fd, text.data(), text.size(), MSG_NOSIGNAL) == static_cast<ssize_t>(text.size())); }

  std::optional<std::string> line() {
    while (pending.find('\n') == std::string::npos) {
      char buf[4096];
      const auto n = ::recv(fd, buf, sizeof buf, 0);
      if (n <= 0) return std::nullopt;
      pending.append(buf, static_cast<std::size_t>(n));
    }
    const auto nl = pending.find('\n');
    auto out = pending.substr(0, nl);
    pending.erase(0, nl + 1);
    return out;
  }
};

}  // namespace

TEST_CASE("tcp server") {
  auto manager = deterministic_manager();
  TcpServer server(*manager, "127.0.0.1", 0);
  server.start();
  REQUIRE(server.port() != 0);
  {
    Client a(server.port());
    Client b(server.port());
    a.send(to_line(start("ta")) + "\n");
    b.send("{\n" + to_line(start("tb")) + "\r\n");
    CHECK(parse_envelope(*a.line()).payload.at("template") == "greeting");
    CHECK(parse_envelope(*b.line()).payload.at("code") == "bad_envelope");
    CHECK(parse_envelope(*b.line()).payload.at("template") == "greeting");
    // Two envelopes in one write, the second split across writes.
    const auto second = to_line(say("ta", geladeira));
    a.send(to_line(say("ta", "oi")) + "\n" + second.substr(0, 10));
    CHECK(parse_envelope(*a.line()).payload.at("template") == "ask_context");
    a.send(second.substr(10) + "\n");
    CHECK(parse_envelope(*a.line()).type == EnvelopeType::bot_message);
    CHECK(parse_envelope(*a.line()).type == EnvelopeType::routing_decision);
    CHECK(parse_envelope(*a.line()).type == EnvelopeType::session_end);
    server.stop();
    CHECK_FALSE(b.line().has_value());
  }
  CHECK(manager->active_sessions() == 1);  // "tb" never finished; stopping does not drop state mid-step
}
