#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <unistd.h>

#include "triage/context.hpp"
#include "triage/corpus.hpp"
#include "triage/io.hpp"
#include "triage/pipeline.hpp"
#include "triage/service.hpp"

namespace triage::testing {

// Corpus (seed 42, 5000 tickets) plus every artifact the service needs, trained
// once per process into a scratch directory.
struct Artifacts {
  std::filesystem::path dir;
  corpus::Corpus corpus;
  context::ContextTrainReport context_report;
  service::ServiceConfig config;
  std::shared_ptr<const receptionist::Models> models;
};

inline std::filesystem::path source_path(const std::string& relative) {
  return std::filesystem::path(TRIAGE_SOURCE_DIR) / relative;
}

inline const Artifacts& trained_artifacts() {
  static const Artifacts a = [] {
    namespace fs = std::filesystem;
    Artifacts out;
    out.dir = fs::temp_directory_path() / ("triage_artifacts_" + std::to_string(::getpid()));
    fs::remove_all(out.dir);
    const auto& catalog = corpus::default_catalog();
    out.corpus = corpus::generate(corpus::CorpusSpec{}, catalog);
    corpus::write_corpus(out.corpus, catalog, out.dir / "corpus");

    const auto stopwords = text::load_stopwords(source_path("config/stopwords_pt.txt"));
    auto ctx = context::train_context_model(out.corpus.context, stopwords, {});
    ctx.model.save(out.dir / "context");
    out.context_report = ctx.report;

    auto data = pipeline::prepare(out.corpus.tickets, eval::SplitSpec{}, 50);
    std::vector<std::string> texts;
    for (const auto& t : data.split.train) texts.push_back(t.text);
    auto bow = std::make_shared<reason::BowProvider>(reason::BowProvider::fit(texts, stopwords));
    reason::HeadConfig head;
    head.train.seed = 1;
    const auto trained = reason::train_reason_model(data.split.train, data.split.val, bow, corpus::profile_schema(),
                                                    data.filter.catalog, head);
    trained.model.save(out.dir / "reason");

    const auto map = catalog.department_map();
    routing::RoutingPolicy policy;
    policy.threshold = pipeline::calibrate(pipeline::score(trained.model, data.split.val, map), policy.coverage);
    io::save_json(policy.to_json(), out.dir / "policy.json");

    out.config = {source_path("config/flow.json"), source_path("config/templates.json"), out.dir / "context",
                  out.dir / "reason",              source_path("config/departments.json"), out.dir / "policy.json",
                  source_path("config/rules.json")};
    out.models = service::load_models(out.config);
    return out;
  }();
  return a;
}

inline std::unique_ptr<service::SessionManager> deterministic_manager() {
  service::ServiceOptions options;
  options.deterministic = true;
  return service::make_manager(trained_artifacts().config, options);
}

/// Runs the golden input through a stdio session and returns the transcript.
inline std::string run_transcript(service::SessionManager& manager, const std::string& input) {
  std::istringstream in(input);
  std::ostringstream out;
  service::run_stdio(manager, in, out);
  return out.str();
}

}  // namespace triage::testing
