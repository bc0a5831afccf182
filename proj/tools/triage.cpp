#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "triage/context.hpp"
#include "triage/corpus.hpp"
#include "triage/error.hpp"
#include "triage/io.hpp"
#include "triage/pipeline.hpp"
#include "triage/service.hpp"

using namespace triage;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GenerateArgs {
  corpus::CorpusSpec spec;
  fs::path out;
};

struct ContextArgs {
  fs::path data;
  fs::path stopwords = "config/stopwords_pt.txt";
  fs::path out;
  context::ContextTrainOptions options;
  std::string strategy = "random";
};

struct ReasonArgs {
  fs::path data;
  fs::path out;
  std::string provider = "bow";
  fs::path stopwords = "config/stopwords_pt.txt";
  fs::path schema = "config/schema.json";
  fs::path embeddings;
  std::string remote;
  std::size_t dimension = 0;
  int timeout_ms = 2000;
  std::string head = "mlp";
  std::vector<std::size_t> hidden{64};
  bool no_hidden = false;
  bool no_text = false;
  bool no_tabular = false;
  std::size_t min_count = 50;
  std::uint64_t seed = 1;
  double C = 1.0;
  std::size_t max_epochs = 200;
};

struct CalibrateArgs {
  fs::path model;
  fs::path data;
  fs::path departments = "config/departments.json";
  double coverage = 0.8;
  std::string fallback = "human_triage";
  fs::path out;
};

struct EvaluateArgs {
  fs::path model;
  fs::path data;
  fs::path departments = "config/departments.json";
  fs::path policy;
  fs::path heuristic = "config/heuristic.json";
  fs::path reference = "data/paper_reference.json";
  std::optional<fs::path> rules;
  std::string name = "fusion";
  fs::path report;
  fs::path json_out;
  bool no_reference = false;
};

struct ServeArgs {
  service::ServiceConfig config{"config/flow.json", "config/templates.json", "models/context", "models/reason",
                                "config/departments.json", "models/policy.json", std::nullopt};
  fs::path rules;
  std::string bind = "127.0.0.1:7070";
  bool stdio = false;
  bool deterministic = false;
  std::optional<std::uint64_t> seed;
};

int generate_corpus(const GenerateArgs& a) {
  const auto& catalog = corpus::default_catalog();
  a.spec.validate(catalog);
  const auto c = corpus::generate(a.spec, catalog);
  corpus::write_corpus(c, catalog, a.out);
  std::cout << "wrote " << c.tickets.size() << " tickets and " << c.context.size() << " context annotations to "
            << a.out.string() << "\n";
  return 0;
}

int train_context(ContextArgs a) {
  if (a.strategy == "grid") a.options.strategy = eval::SearchStrategy::grid;
  const auto annotations = context::read_annotations(a.data);
  const auto result = context::train_context_model(annotations, text::load_stopwords(a.stopwords), a.options);
  result.model.save(a.out);
  io::save_json(result.report.to_json(), a.out / "report.json");
  const auto& r = result.report;
  std::cout << "context gate: " << r.positives << " positive, " << r.negatives << " negative, " << r.dropped
            << " dropped\n";
  std::cout << "validation accuracy " << eval::format_percent(r.validation_accuracy, 1) << " (default config "
            << eval::format_percent(r.default_validation_accuracy, 1) << ")\n";
  if (r.test_accuracy) std::cout << "test accuracy " << eval::format_percent(*r.test_accuracy, 1) << "\n";
  std::cout << "best " << r.best_config.dump() << "\n";
  return 0;
}

std::shared_ptr<const reason::EmbeddingProvider> make_reason_provider(const ReasonArgs& a,
                                                                      std::span<const corpus::Ticket> train) {
  if (a.provider == "bow") {
    std::vector<std::string> texts;
    texts.reserve(train.size());
    for (const auto& t : train) texts.push_back(t.text);
    return std::make_shared<reason::BowProvider>(reason::BowProvider::fit(texts, text::load_stopwords(a.stopwords)));
  }
  if (a.provider == "file") {
    if (a.embeddings.empty()) throw Error(ErrorCode::invalid_argument, "--provider file needs --embeddings");
    auto table = std::make_shared<const reason::EmbeddingTable>(reason::EmbeddingTable::load(a.embeddings));
    return std::make_shared<reason::FileProvider>(table, fs::absolute(a.embeddings));
  }
  if (a.remote.empty() || a.dimension == 0) {
    throw Error(ErrorCode::invalid_argument, "--provider remote needs --remote host:port/path and --dimension");
  }
  const auto slash = a.remote.find('/');
  const auto [host, port] = service::parse_bind(a.remote.substr(0, slash));
  const std::string path = slash == std::string::npos ? "/" : a.remote.substr(slash);
  return std::make_shared<reason::RemoteProvider>(host, port, path, a.dimension, std::chrono::milliseconds(a.timeout_ms));
}

int train_reason(const ReasonArgs& a) {
  auto data = pipeline::prepare(corpus::read_dataset(a.data), eval::SplitSpec{}, a.min_count);
  reason::HeadConfig head;
  head.kind = a.head == "logistic" ? reason::HeadConfig::Kind::logistic : reason::HeadConfig::Kind::mlp;
  head.hidden = a.no_hidden ? std::vector<std::size_t>{} : a.hidden;
  head.use_text = !a.no_text;
  head.use_tabular = !a.no_tabular;
  head.C = a.C;
  head.train.seed = a.seed;
  head.train.max_epochs = a.max_epochs;
  const auto provider = head.use_text ? make_reason_provider(a, data.split.train) : nullptr;
  const auto schema = tabular::FeatureSchema::from_json(io::load_json(a.schema));
  const auto result = reason::train_reason_model(data.split.train, data.split.val, provider, schema,
                                                 data.filter.catalog, head);
  result.model.save(a.out);
  json log{{"data", data.summary()},
           {"head", head.to_json()},
           {"validation_top1", result.validation_top1},
           {"epochs", result.log.loss.size()}};
  io::save_json(log, a.out / "train.json");
  std::cout << "kept " << data.filter.catalog.kept.size() << " of " << data.filter.catalog.reasons.size()
            << " reasons; validation top-1 " << eval::format_percent(result.validation_top1, 1) << "\n";
  return 0;
}

int calibrate(const CalibrateArgs& a) {
  const auto model = reason::ReasonModel::load(a.model);
  const auto map = routing::DepartmentMap::from_json(io::load_json(a.departments));
  const auto split = pipeline::split_for_model(corpus::read_dataset(a.data), eval::SplitSpec{}, model.labels);
  const auto scored = pipeline::score(model, split.val, map);
  routing::RoutingPolicy policy;
  policy.coverage = a.coverage;
  policy.fallback = a.fallback;
  policy.threshold = pipeline::calibrate(scored, a.coverage);
  std::size_t covered = 0;
  for (const auto& s : scored) {
    if (routing::rank_departments(s.departments).front().second >= policy.threshold) ++covered;
  }
  io::save_json(policy.to_json(), a.out);
  std::cout << "threshold " << policy.threshold << " routes " << covered << " of " << scored.size()
            << " validation tickets (" << eval::format_percent(static_cast<double>(covered) / scored.size(), 2)
            << ")\n";
  return 0;
}

int evaluate(const EvaluateArgs& a) {
  const auto model = reason::ReasonModel::load(a.model);
  const auto map = routing::DepartmentMap::from_json(io::load_json(a.departments));
  const auto policy = routing::RoutingPolicy::from_json(io::load_json(a.policy));
  const auto rules = a.rules ? routing::RuleSet::from_json(io::load_json(*a.rules)) : routing::RuleSet{};
  const auto split = pipeline::split_for_model(corpus::read_dataset(a.data), eval::SplitSpec{}, model.labels);
  std::vector<eval::MetricReport> reports;
  reports.push_back(pipeline::evaluate(a.name, model, split.test, map, policy, rules));
  if (!a.heuristic.empty()) {
    const auto lookup = routing::HeuristicLookup::from_json(io::load_json(a.heuristic));
    reports.push_back(pipeline::evaluate_heuristic("heuristic", split.test, lookup));
  }
  const json baselines = a.no_reference ? json::object() : io::load_json(a.reference);
  const auto text = eval::render_report(reports, baselines);
  std::cout << text;
  if (!a.report.empty()) io::write_file(a.report, text);
  if (!a.json_out.empty()) {
    json doc = json::array();
    for (const auto& r : reports) doc.push_back(r.to_json());
    io::save_json(doc, a.json_out);
  }
  return 0;
}

int serve(ServeArgs a) {
  if (!a.rules.empty()) a.config.rules = a.rules;
  service::ServiceOptions options;
  options.deterministic = a.deterministic;
  if (a.seed) {
    options.seed = *a.seed;
    options.seed_set = true;
  }
  auto manager = service::make_manager(a.config, options);
  for (const auto& w : manager->flow().warnings) std::cerr << "warning: " << w << "\n";
  if (a.stdio) {
    service::run_stdio(*manager, std::cin, std::cout);
    return 0;
  }

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  const auto [host, port] = service::parse_bind(a.bind);
  service::TcpServer server(*manager, host, port);
  server.start();
  std::cerr << "listening on " << host << ":" << server.port() << "\n";
  int received = 0;
  sigwait(&signals, &received);
  std::cerr << "shutting down\n";
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Support triage engine: corpus generation, training, calibration, evaluation and chat service"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-corpus", "Write a synthetic labeled corpus");
  g->add_option("--seed", gen.spec.seed);
  g->add_option("--size", gen.spec.size, "Number of tickets");
  g->add_option("--ambiguity", gen.spec.ambiguity_rate, "Share of tickets using a shared ambiguous message");
  g->add_option("--context-size", gen.spec.context_size, "Number of context-gate annotations");
  g->add_option("--embedding-noise", gen.spec.embedding_noise);
  g->add_option("--out", gen.out)->required();

  ContextArgs ctx;
  auto* c = app.add_subcommand("train-context", "Train the enough-context gate");
  c->add_option("--data", ctx.data, "context.tsv")->required()->check(CLI::ExistingFile);
  c->add_option("--stopwords", ctx.stopwords)->check(CLI::ExistingFile);
  c->add_option("--out", ctx.out, "Model directory")->required();
  c->add_option("--seed", ctx.options.seed);
  c->add_option("--budget", ctx.options.search_budget, "Hyperparameter configurations to try");
  c->add_option("--strategy", ctx.strategy)->check(CLI::IsMember({"random", "grid"}));
  c->add_option("--vocabulary-size", ctx.options.vocabulary_size);
  c->add_option("--threshold", ctx.options.threshold);

  ReasonArgs rea;
  auto* r = app.add_subcommand("train-reason", "Train the contact-reason classifier");
  r->add_option("--data", rea.data, "dataset.tsv")->required()->check(CLI::ExistingFile);
  r->add_option("--out", rea.out, "Model directory")->required();
  r->add_option("--provider", rea.provider)->check(CLI::IsMember({"bow", "file", "remote"}));
  r->add_option("--embeddings", rea.embeddings, "Embedding table for --provider file");
  r->add_option("--remote", rea.remote, "host:port/path for --provider remote");
  r->add_option("--dimension", rea.dimension, "Vector length for --provider remote");
  r->add_option("--timeout-ms", rea.timeout_ms);
  r->add_option("--stopwords", rea.stopwords)->check(CLI::ExistingFile);
  r->add_option("--schema", rea.schema)->check(CLI::ExistingFile);
  r->add_option("--head", rea.head)->check(CLI::IsMember({"mlp", "logistic"}));
  r->add_option("--hidden", rea.hidden, "Hidden layer widths");
  r->add_flag("--no-hidden", rea.no_hidden, "MLP without hidden layers");
  r->add_flag("--no-text", rea.no_text);
  r->add_flag("--no-tabular", rea.no_tabular);
  r->add_option("--min-count", rea.min_count, "Minimum training rows per reason");
  r->add_option("--seed", rea.seed);
  r->add_option("--C", rea.C, "Inverse regularization strength for the logistic head");
  r->add_option("--max-epochs", rea.max_epochs);

  CalibrateArgs cal;
  auto* k = app.add_subcommand("calibrate", "Pick the routing threshold for a target coverage");
  k->add_option("--model", cal.model)->required()->check(CLI::ExistingDirectory);
  k->add_option("--data", cal.data)->required()->check(CLI::ExistingFile);
  k->add_option("--departments", cal.departments)->check(CLI::ExistingFile);
  k->add_option("--coverage", cal.coverage)->check(CLI::Range(0.0, 1.0));
  k->add_option("--fallback", cal.fallback);
  k->add_option("--out", cal.out, "policy.json")->required();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Accuracy and routing report on the test split");
  e->add_option("--model", ev.model)->required()->check(CLI::ExistingDirectory);
  e->add_option("--data", ev.data)->required()->check(CLI::ExistingFile);
  e->add_option("--departments", ev.departments)->check(CLI::ExistingFile);
  e->add_option("--policy", ev.policy)->required()->check(CLI::ExistingFile);
  e->add_option("--heuristic", ev.heuristic);
  e->add_option("--reference", ev.reference);
  e->add_flag("--no-reference", ev.no_reference, "Omit the published reference values");
  e->add_option("--rules", ev.rules)->check(CLI::ExistingFile);
  e->add_option("--name", ev.name);
  e->add_option("--report", ev.report, "Also write the text report here");
  e->add_option("--json", ev.json_out, "Also write the metrics as JSON");

  ServeArgs sv;
  auto* s = app.add_subcommand("serve", "Chat sessions over line-delimited JSON envelopes");
  s->add_option("--flow", sv.config.flow);
  s->add_option("--templates", sv.config.templates);
  s->add_option("--context-model", sv.config.context_model)->envname("TRIAGE_CONTEXT_MODEL");
  s->add_option("--reason-model", sv.config.reason_model)->envname("TRIAGE_REASON_MODEL");
  s->add_option("--departments", sv.config.departments);
  s->add_option("--policy", sv.config.policy)->envname("TRIAGE_POLICY");
  s->add_option("--rules", sv.rules);
  s->add_option("--bind", sv.bind, "host:port")->envname("TRIAGE_BIND");
  s->add_flag("--stdio", sv.stdio, "Read envelopes from stdin, write to stdout");
  s->add_flag("--deterministic", sv.deterministic, "Pin template variants and timestamps");
  s->add_option("--seed", sv.seed, "Template variant seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*g) return generate_corpus(gen);
    if (*c) return train_context(ctx);
    if (*r) return train_reason(rea);
    if (*k) return calibrate(cal);
    if (*e) return evaluate(ev);
    if (*s) return serve(sv);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
