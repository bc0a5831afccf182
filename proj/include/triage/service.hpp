#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/dialog.hpp"
#include "triage/error.hpp"
#include "triage/receptionist.hpp"

namespace triage::service {

enum class EnvelopeType { session_start, user_message, bot_message, routing_decision, error, session_end };

std::string to_string(EnvelopeType type);
std::optional<EnvelopeType> parse_type(std::string_view name);

/// One line of the wire protocol: {"type", "session_id", "ts", "payload"}.
struct Envelope {
  EnvelopeType type = EnvelopeType::user_message;
  std::string session_id;
  std::int64_t ts = 0;
  nlohmann::json payload = nlohmann::json::object();

  nlohmann::json to_json() const;
  bool operator==(const Envelope&) const = default;
};

/// Throws bad_envelope. Unknown top-level fields are ignored.
Envelope parse_envelope(std::string_view line);
/// Single line, no trailing newline; newlines inside strings are escaped.
std::string to_line(const Envelope& envelope);

Envelope error_envelope(const std::string& session_id, std::string_view code, const std::string& message,
                        std::int64_t ts);

struct Session {
  std::mutex mutex;
  dialog::DialogMemory memory;
  std::int64_t clock = 0;
  bool closed = false;
};

/// Narrow storage interface so sessions can later live elsewhere.
class SessionStore {
 public:
  virtual ~SessionStore() = default;
  /// Null if the id is taken.
  virtual std::shared_ptr<Session> create(const std::string& id) = 0;
  virtual std::shared_ptr<Session> find(const std::string& id) const = 0;
  virtual void erase(const std::string& id) = 0;
  virtual std::size_t size() const = 0;
};

class InMemorySessionStore final : public SessionStore {
 public:
  std::shared_ptr<Session> create(const std::string& id) override;
  std::shared_ptr<Session> find(const std::string& id) const override;
  void erase(const std::string& id) override;
  std::size_t size() const override;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

struct ServiceOptions {
  bool deterministic = false;  // pinned variant seed and per-session counter timestamps
  std::uint64_t seed = 0;      // template variant seed; ignored unless deterministic or explicitly set
  bool seed_set = false;
};

class SessionManager {
 public:
  SessionManager(dialog::FlowDefinition flow, dialog::HandlerRegistry registry, dialog::TemplateStore templates,
                 ServiceOptions options, std::unique_ptr<SessionStore> store = nullptr);

  std::vector<Envelope> handle(const Envelope& inbound);
  /// Never throws; a line that does not parse yields a bad_envelope error.
  std::vector<Envelope> handle_line(std::string_view line);

  std::optional<dialog::DialogMemory> snapshot(const std::string& session_id) const;
  std::size_t active_sessions() const { return store_->size(); }
  const dialog::FlowDefinition& flow() const { return flow_; }

 private:
  std::int64_t stamp(Session* session);
  std::vector<Envelope> run_step(Session& session, const dialog::InboundEvent& event);

  dialog::FlowDefinition flow_;
  dialog::HandlerRegistry registry_;
  dialog::TemplateStore templates_;
  ServiceOptions options_;
  std::uint64_t seed_;
  std::unique_ptr<SessionStore> store_;
};

/// Artifact locations for a receptionist service.
struct ServiceConfig {
  std::filesystem::path flow;
  std::filesystem::path templates;
  std::filesystem::path context_model;  // directory
  std::filesystem::path reason_model;   // directory
  std::filesystem::path departments;
  std::filesystem::path policy;
  std::optional<std::filesystem::path> rules;
};

/// Loads and cross-checks every artifact; any failure throws before a session exists.
std::shared_ptr<const receptionist::Models> load_models(const ServiceConfig& config);
std::unique_ptr<SessionManager> make_manager(const ServiceConfig& config, const ServiceOptions& options);
std::unique_ptr<SessionManager> make_manager(std::shared_ptr<const receptionist::Models> models,
                                             const nlohmann::json& flow, const nlohmann::json& templates,
                                             const ServiceOptions& options);

/// Reads envelopes line by line until end of input; returns the number of lines read.
std::size_t run_stdio(SessionManager& manager, std::istream& in, std::ostream& out);

/// Line-delimited envelopes over TCP; connections share the session manager.
class TcpServer {
 public:
  TcpServer(SessionManager& manager, std::string host, std::uint16_t port);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  /// Binds and starts accepting; port 0 picks a free port.
  void start();
  std::uint16_t port() const { return port_; }
  /// Stops accepting, lets every connection finish the line it is processing, joins.
  void stop();

 private:
  struct Connection {
    int fd = -1;
    std::thread worker;
    std::atomic<bool> done{false};
  };

  void accept_loop();
  void serve_connection(Connection& connection);

  SessionManager& manager_;
  std::string host_;
  std::uint16_t port_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex connections_mutex_;
  std::list<Connection> connections_;
};

/// "host:port" or ":port".
std::pair<std::string, std::uint16_t> parse_bind(std::string_view bind);

}  // namespace triage::service
