#include "triage/service.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>

#include "triage/io.hpp"

namespace triage::service {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxLineBytes = 1 << 20;

std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::string to_string(EnvelopeType type) {
  switch (type) {
    case EnvelopeType::session_start: return "session_start";
    case EnvelopeType::user_message: return "user_message";
    case EnvelopeType::bot_message: return "bot_message";
    case EnvelopeType::routing_decision: return "routing_decision";
    case EnvelopeType::error: return "error";
    case EnvelopeType::session_end: return "session_end";
  }
  return "unknown";
}

std::optional<EnvelopeType> parse_type(std::string_view name) {
  for (auto t : {EnvelopeType::session_start, EnvelopeType::user_message, EnvelopeType::bot_message,
                 EnvelopeType::routing_decision, EnvelopeType::error, EnvelopeType::session_end}) {
    if (to_string(t) == name) return t;
  }
  return std::nullopt;
}

json Envelope::to_json() const {
  return {{"type", to_string(type)}, {"session_id", session_id}, {"ts", ts}, {"payload", payload}};
}

Envelope parse_envelope(std::string_view line) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::exception&) {
    throw Error(ErrorCode::bad_envelope, "line is not valid JSON");
  }
  if (!doc.is_object()) throw Error(ErrorCode::bad_envelope, "envelope must be an object");
  Envelope e;
  const auto type = doc.find("type");
  if (type == doc.end() || !type->is_string()) throw Error(ErrorCode::bad_envelope, "missing string field 'type'");
  const auto parsed = parse_type(type->get<std::string>());
  if (!parsed) throw Error(ErrorCode::bad_envelope, "unknown envelope type");
  e.type = *parsed;
  const auto sid = doc.find("session_id");
  if (sid == doc.end() || !sid->is_string()) throw Error(ErrorCode::bad_envelope, "missing string field 'session_id'");
  e.session_id = sid->get<std::string>();
  if (const auto ts = doc.find("ts"); ts != doc.end()) {
    if (!ts->is_number_integer()) throw Error(ErrorCode::bad_envelope, "'ts' must be an integer");
    e.ts = ts->get<std::int64_t>();
  }
  if (const auto payload = doc.find("payload"); payload != doc.end()) {
    if (!payload->is_object()) throw Error(ErrorCode::bad_envelope, "'payload' must be an object");
    e.payload = *payload;
  }
  return e;
}

std::string to_line(const Envelope& envelope) {
  return envelope.to_json().dump(-1, ' ', false, json::error_handler_t::replace);
}

Envelope error_envelope(const std::string& session_id, std::string_view code, const std::string& message,
                        std::int64_t ts) {
  return {EnvelopeType::error, session_id, ts, {{"code", code}, {"message", message}}};
}

std::shared_ptr<Session> InMemorySessionStore::create(const std::string& id) {
  std::lock_guard lock(mutex_);
  auto [it, inserted] = sessions_.try_emplace(id, nullptr);
  if (!inserted) return nullptr;
  it->second = std::make_shared<Session>();
  return it->second;
}

std::shared_ptr<Session> InMemorySessionStore::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

void InMemorySessionStore::erase(const std::string& id) {
  std::lock_guard lock(mutex_);
  sessions_.erase(id);
}

std::size_t InMemorySessionStore::size() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

SessionManager::SessionManager(dialog::FlowDefinition flow, dialog::HandlerRegistry registry,
                               dialog::TemplateStore templates, ServiceOptions options,
                               std::unique_ptr<SessionStore> store)
    : flow_(std::move(flow)),
      registry_(std::move(registry)),
      templates_(std::move(templates)),
      options_(options),
      seed_(options.deterministic || options.seed_set ? options.seed : std::random_device{}()),
      store_(store ? std::move(store) : std::make_unique<InMemorySessionStore>()) {
  dialog::check_templates(flow_, templates_);
}

std::int64_t SessionManager::stamp(Session* session) {
  if (!options_.deterministic) return wall_clock_ms();
  return session == nullptr ? 0 : ++session->clock;
}

std::vector<Envelope> SessionManager::run_step(Session& session, const dialog::InboundEvent& event) {
  const dialog::Engine engine{flow_, registry_, templates_, seed_};
  auto result = dialog::step(session.memory, event, engine);
  session.memory = std::move(result.memory);
  const auto& id = session.memory.session_id;

  std::vector<Envelope> out;
  for (const auto& action : result.actions) {
    if (action.kind == dialog::Action::Kind::message) {
      out.push_back({EnvelopeType::bot_message, id, stamp(&session),
                     {{"text", action.text}, {"template", action.template_id}}});
    } else {
      out.push_back({EnvelopeType::routing_decision, id, stamp(&session), action.payload});
    }
  }
  if (flow_.is_terminal(session.memory.state)) {
    out.push_back({EnvelopeType::session_end, id, stamp(&session),
                   {{"reason", "completed"}, {"state", session.memory.state}}});
    session.closed = true;
    store_->erase(id);
  }
  return out;
}

std::vector<Envelope> SessionManager::handle(const Envelope& in) {
  const auto& id = in.session_id;
  switch (in.type) {
    case EnvelopeType::session_start: {
      if (id.empty()) return {error_envelope(id, "bad_envelope", "session_id must not be empty", stamp(nullptr))};
      auto session = store_->create(id);
      if (!session) return {error_envelope(id, "invalid_argument", "session already exists", stamp(nullptr))};
      std::lock_guard lock(session->mutex);
      session->memory = dialog::initial_memory(flow_, id);
      const auto ts = stamp(session.get());
      try {
        return run_step(*session, {dialog::InboundEvent::Kind::session_start, {}, in.payload, ts});
      } catch (const Error& e) {
        session->closed = true;
        store_->erase(id);
        return {error_envelope(id, to_string(e.code()), e.message(), stamp(nullptr))};
      }
    }
    case EnvelopeType::user_message: {
      const auto text = in.payload.find("text");
      if (text == in.payload.end() || !text->is_string()) {
        return {error_envelope(id, "bad_envelope", "user_message needs a string payload.text", stamp(nullptr))};
      }
      auto session = store_->find(id);
      if (!session) return {error_envelope(id, "unknown_session", "no open session with this id", stamp(nullptr))};
      std::lock_guard lock(session->mutex);
      if (session->closed) return {error_envelope(id, "unknown_session", "session is closed", stamp(nullptr))};
      const auto ts = stamp(session.get());
      try {
        return run_step(*session, {dialog::InboundEvent::Kind::user_message, text->get<std::string>(), {}, ts});
      } catch (const Error& e) {
        return {error_envelope(id, to_string(e.code()), e.message(), stamp(session.get()))};
      }
    }
    case EnvelopeType::session_end: {
      auto session = store_->find(id);
      if (!session) return {error_envelope(id, "unknown_session", "no open session with this id", stamp(nullptr))};
      std::lock_guard lock(session->mutex);
      if (session->closed) return {error_envelope(id, "unknown_session", "session is closed", stamp(nullptr))};
      session->closed = true;
      store_->erase(id);
      return {{EnvelopeType::session_end, id, stamp(session.get()),
               {{"reason", "client_closed"}, {"state", session->memory.state}}}};
    }
    default:
      return {error_envelope(id, "bad_envelope", "'" + to_string(in.type) + "' is sent by the service only",
                             stamp(nullptr))};
  }
}

std::vector<Envelope> SessionManager::handle_line(std::string_view line) {
  try {
    return handle(parse_envelope(line));
  } catch (const Error& e) {
    return {error_envelope("", to_string(e.code()), e.message(), stamp(nullptr))};
  } catch (const std::exception& e) {
    return {error_envelope("", "handler_failure", e.what(), stamp(nullptr))};
  }
}

std::optional<dialog::DialogMemory> SessionManager::snapshot(const std::string& session_id) const {
  auto session = store_->find(session_id);
  if (!session) return std::nullopt;
  std::lock_guard lock(session->mutex);
  return session->memory;
}

std::shared_ptr<const receptionist::Models> load_models(const ServiceConfig& config) {
  auto models = std::make_shared<receptionist::Models>();
  models->context = context::ContextModel::load(config.context_model);
  models->reason = reason::ReasonModel::load(config.reason_model);
  models->departments = routing::DepartmentMap::from_json(io::load_json(config.departments));
  models->departments.check_total(models->reason.labels.kept);
  models->policy = routing::RoutingPolicy::from_json(io::load_json(config.policy));
  if (config.rules) models->rules = routing::RuleSet::from_json(io::load_json(*config.rules));
  return models;
}

namespace {

std::vector<std::string> declared_slots(const dialog::FlowDefinition& flow) {
  std::vector<std::string> slots{"profile", "messages", "description", "context", "prediction"};
  for (const auto& [_, spec] : flow.states) {
    for (const auto& f : spec.params.value("required", json::array())) slots.push_back(f.at("slot").get<std::string>());
  }
  return slots;
}

}  // namespace

std::unique_ptr<SessionManager> make_manager(std::shared_ptr<const receptionist::Models> models, const json& flow_doc,
                                             const json& templates_doc, const ServiceOptions& options) {
  auto registry = receptionist::make_registry(models);
  auto flow = dialog::load_flow(flow_doc, registry);
  models->rules.validate(declared_slots(flow));
  return std::make_unique<SessionManager>(std::move(flow), std::move(registry), dialog::TemplateStore::from_json(templates_doc),
                                          options);
}

std::unique_ptr<SessionManager> make_manager(const ServiceConfig& config, const ServiceOptions& options) {
  return make_manager(load_models(config), io::load_json(config.flow), io::load_json(config.templates), options);
}

std::size_t run_stdio(SessionManager& manager, std::istream& in, std::ostream& out) {
  std::size_t lines = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lines;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    for (const auto& e : manager.handle_line(line)) out << to_line(e) << '\n';
    out.flush();
  }
  return lines;
}

std::pair<std::string, std::uint16_t> parse_bind(std::string_view bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string_view::npos) throw Error(ErrorCode::invalid_argument, "bind address must be host:port");
  std::string host(bind.substr(0, colon));
  const std::string port_text(bind.substr(colon + 1));
  if (host.empty()) host = "127.0.0.1";
  try {
    std::size_t used = 0;
    const auto port = std::stoul(port_text, &used);
    if (used != port_text.size() || port > 65535) throw std::out_of_range("port");
    return {host, static_cast<std::uint16_t>(port)};
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument, "bad port in bind address '" + std::string(bind) + "'");
  }
}

TcpServer::TcpServer(SessionManager& manager, std::string host, std::uint16_t port)
    : manager_(manager), host_(std::move(host)), port_(port) {}

TcpServer::~TcpServer() { stop(); }

void TcpServer::start() {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* found = nullptr;
  if (getaddrinfo(host_.c_str(), std::to_string(port_).c_str(), &hints, &found) != 0 || found == nullptr) {
    throw Error(ErrorCode::io_error, "cannot resolve bind host '" + host_ + "'");
  }
  listen_fd_ = ::socket(found->ai_family, found->ai_socktype, found->ai_protocol);
  const int yes = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  const bool ok = listen_fd_ >= 0 && ::bind(listen_fd_, found->ai_addr, found->ai_addrlen) == 0 &&
                  ::listen(listen_fd_, 64) == 0;
  freeaddrinfo(found);
  if (!ok) {
    const std::string reason = std::strerror(errno);
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::io_error, "cannot listen on " + host_ + ":" + std::to_string(port_) + ": " + reason);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

void TcpServer::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stopping_) break;
      if (errno == EINTR || errno == ECONNABORTED) continue;
      break;
    }
    std::lock_guard lock(connections_mutex_);
    for (auto it = connections_.begin(); it != connections_.end();) {
      if (it->done) {
        it->worker.join();
        ::close(it->fd);
        it = connections_.erase(it);
      } else {
        ++it;
      }
    }
    if (stopping_) {
      ::close(fd);
      break;
    }
    auto& c = connections_.emplace_back();
    c.fd = fd;
    c.worker = std::thread([this, &c] { serve_connection(c); });
  }
}

namespace {

bool send_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const auto n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

void TcpServer::serve_connection(Connection& c) {
  std::string buffer;
  char chunk[4096];
  bool open = true;
  while (open) {
    const auto n = ::recv(c.fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (auto nl = buffer.find('\n'); nl != std::string::npos; nl = buffer.find('\n', start)) {
      std::string_view line(buffer.data() + start, nl - start);
      start = nl + 1;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
      std::string reply;
      for (const auto& e : manager_.handle_line(line)) reply += to_line(e) + '\n';
      if (!send_all(c.fd, reply)) {
        open = false;
        break;
      }
    }
    buffer.erase(0, start);
    if (buffer.size() > kMaxLineBytes) {
      send_all(c.fd, to_line(error_envelope("", "bad_envelope", "line exceeds 1 MiB", 0)) + '\n');
      buffer.clear();
    }
  }
  ::shutdown(c.fd, SHUT_RDWR);
  c.done = true;
}

void TcpServer::stop() {
  if (stopping_.exchange(true)) return;
  if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard lock(connections_mutex_);
    for (auto& c : connections_) {
      ::shutdown(c.fd, SHUT_RD);
    }
  }
  for (auto& c : connections_) {
    if (c.worker.joinable()) c.worker.join();
    ::close(c.fd);
  }
  connections_.clear();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  listen_fd_ = -1;
}

}  // namespace triage::service
