#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <set>

#include "triage/corpus.hpp"
#include "triage/error.hpp"
#include "triage/io.hpp"
#include "triage/pipeline.hpp"
#include "triage/text.hpp"

using namespace triage;
using namespace triage::corpus;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "triage_test_corpus";
  fs::create_directories(dir);
  return dir / name;
}

CorpusSpec small_spec(std::size_t size = 1000) {
  CorpusSpec spec;
  spec.size = size;
  spec.context_size = 200;
  return spec;
}

/// Token-level pattern for a template; placeholders match any short token run.
std::regex template_pattern(std::string tpl) {
  for (const auto& [from, to] : std::vector<std::pair<std::string, std::string>>{{"{dia}", " qqdia "}, {"{imovel}", " qqimovel "}}) {
    for (auto pos = tpl.find(from); pos != std::string::npos; pos = tpl.find(from)) tpl.replace(pos, from.size(), to);
  }
  std::string pattern = "(^| )";
  bool first = true;
  for (const auto& token : text::preprocess(tpl)) {
    if (!first) pattern += ' ';
    first = false;
    if (token == "qqdia") {
      pattern += "[a-z0-9]+( [a-z0-9]+){0,2}";
    } else if (token == "qqimovel") {
      pattern += "[a-z]+ [0-9]+";
    } else {
      pattern += token;
    }
  }
  return std::regex(pattern + "( |$)");
}

/// template text -> reasons of the tickets whose text it matches
std::map<std::string, std::set<std::string>> group_by_template(const std::vector<Ticket>& tickets, const Catalog& catalog) {
  std::vector<std::pair<std::string, std::regex>> patterns;
  for (const auto& r : catalog.reasons) {
    for (const auto& t : r.templates) patterns.emplace_back(t, template_pattern(t));
  }
  for (const auto& group : catalog.group_templates) {
    for (const auto& t : group) patterns.emplace_back(t, template_pattern(t));
  }
  std::map<std::string, std::set<std::string>> out;
  for (const auto& ticket : tickets) {
    const auto normalized = text::join(text::preprocess(ticket.text));
    bool matched = false;
    for (const auto& [tpl, re] : patterns) {
      if (std::regex_search(normalized, re)) {
        out[tpl].insert(ticket.reason);
        matched = true;
      }
    }
    INFO(ticket.text);
    CHECK(matched);
  }
  return out;
}

}  // namespace

TEST_CASE("default catalog shape") {
  const auto& catalog = default_catalog();
  CHECK(catalog.reasons.size() == 24);
  CHECK(catalog.departments.size() == 6);
  CHECK(catalog.group_templates.size() == 8);
  std::map<int, std::set<Role>> roles;
  std::set<std::string> codes;
  for (const auto& r : catalog.reasons) {
    roles[r.group].insert(r.role);
    codes.insert(r.code);
    CHECK(std::find(catalog.departments.begin(), catalog.departments.end(), r.department) != catalog.departments.end());
  }
  CHECK(codes.size() == 24);
  for (const auto& [group, members] : roles) CHECK(members.size() == 3);  // profiles separate every ambiguity group
  CHECK(catalog.find("cr_pg").department == "payments");
  CHECK_THROWS_AS(catalog.find("nope"), Error);
}

TEST_CASE("shipped config files match the catalog") {
  const fs::path config = fs::path(TRIAGE_SOURCE_DIR) / "config";
  const auto& catalog = default_catalog();
  CHECK(io::load_json(config / "departments.json") == catalog.department_map().to_json());
  CHECK(io::load_json(config / "schema.json") == profile_schema().to_json());
  CHECK(io::load_json(config / "heuristic.json") == catalog.heuristic_lookup().to_json());
}

TEST_CASE("generation is deterministic") {
  const auto a = generate(small_spec());
  const auto b = generate(small_spec());
  CHECK(a.tickets == b.tickets);
  CHECK(a.context == b.context);
  CHECK(a.planted == b.planted);
  write_dataset(a.tickets, scratch("a.tsv"));
  write_dataset(b.tickets, scratch("b.tsv"));
  CHECK(io::read_file(scratch("a.tsv")) == io::read_file(scratch("b.tsv")));
  auto other = small_spec();
  other.seed = 43;
  CHECK(generate(other).tickets != a.tickets);
}

TEST_CASE("ticket invariants") {
  const auto corpus = generate(small_spec(2000));
  const auto& catalog = default_catalog();
  const auto map = catalog.department_map();
  const auto schema = profile_schema();
  std::set<std::string> ids;
  std::int64_t last = 0;
  for (const auto& t : corpus.tickets) {
    CHECK(ids.insert(t.id).second);
    CHECK(t.timestamp > last);
    last = t.timestamp;
    CHECK(t.department == map.department_of(t.reason));
    CHECK_NOTHROW(tabular::check_record(schema, t.profile));
    CHECK_FALSE(t.text.empty());
  }
  std::set<context::ContextLabel> labels;
  for (const auto& a : corpus.context) labels.insert(a.label);
  CHECK(labels.size() == 4);
  CHECK(corpus.planted.size() == corpus.tickets.size());
  CHECK(corpus.planted.dimension() == 16);
  CHECK(corpus.oracle.dimension() == 24);
  for (std::size_t i = 0; i < corpus.tickets.size(); ++i) {
    const float* v = corpus.oracle.find(corpus.tickets[i].id);
    REQUIRE(v != nullptr);
    CHECK(v[catalog.index_of(corpus.tickets[i].reason)] == 1.0f);
  }
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(generate(small_spec(10)), Error);
  auto bad = small_spec();
  bad.ambiguity_rate = 1.5;
  CHECK_THROWS_AS(generate(bad), Error);
  bad = small_spec();
  bad.no_context_rate = 0.9;
  bad.low_value_rate = 0.2;
  CHECK_THROWS_AS(generate(bad), Error);
}

TEST_CASE("without ambiguity every template belongs to one reason") {
  auto spec = small_spec(1500);
  spec.ambiguity_rate = 0.0;
  spec.label_noise = 0.0;
  const auto corpus = generate(spec);
  const auto groups = group_by_template(corpus.tickets, default_catalog());
  for (const auto& [tpl, reasons] : groups) {
    INFO(tpl);
    CHECK(reasons.size() == 1);
  }
}

TEST_CASE("with ambiguity shared templates span several reasons") {
  auto spec = small_spec(3000);
  spec.ambiguity_rate = 0.5;
  spec.label_noise = 0.0;
  const auto corpus = generate(spec);
  const auto groups = group_by_template(corpus.tickets, default_catalog());
  std::size_t shared = 0;
  for (const auto& group : default_catalog().group_templates) {
    for (const auto& tpl : group) {
      if (groups.contains(tpl) && groups.at(tpl).size() >= 2) ++shared;
    }
  }
  CHECK(shared >= 16);
}

TEST_CASE("long tail leaves some classes under the filter threshold") {
  auto spec = small_spec(5000);
  const auto data = pipeline::prepare(generate(spec).tickets, eval::SplitSpec{}, 50);
  CHECK(data.filter.catalog.reasons.size() == 24);
  CHECK(data.filter.catalog.kept.size() < 24);
  CHECK(data.filter.catalog.kept.size() >= 18);
  CHECK(data.train_counts.kept + data.train_counts.dropped == 4000);
  CHECK(data.validation_counts.kept + data.validation_counts.dropped == 500);
  CHECK(data.test_counts.kept + data.test_counts.dropped == 500);
}

TEST_CASE("dataset round trip") {
  const auto corpus = generate(small_spec());
  const auto path = scratch("round.tsv");
  write_dataset(corpus.tickets, path);
  CHECK(read_dataset(path) == corpus.tickets);

  DatasetReader reader(path);
  std::size_t n = 0;
  while (reader.next()) ++n;
  CHECK(n == 1000);
}

TEST_CASE("special characters survive the dataset format") {
  Ticket t;
  t.id = "t-1";
  t.timestamp = 5;
  t.text = "linha 1\nlinha\t2 \\ fim\r";
  t.profile.values["is_photographer"] = std::string("true");
  t.profile.values["account_age_days"] = 0.1;
  t.reason = "cr_pg";
  t.department = "payments";
  const std::vector<Ticket> one{t};
  write_dataset(one, scratch("special.tsv"));
  CHECK(read_dataset(scratch("special.tsv")) == one);
}

TEST_CASE("malformed dataset files") {
  const auto corpus = generate(small_spec(30));
  const auto path = scratch("trunc.tsv");
  write_dataset(corpus.tickets, path);
  auto content = io::read_file(path);
  content.resize(content.size() - 40);  // cut inside the last row
  io::write_file(path, content);
  CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("line 31"), Error);

  io::write_file(path, "id\ttimestamp\treason\tdepartment\ttext\tprofile\n");
  CHECK(read_dataset(path).empty());

  io::write_file(path, "wrong header\n");
  CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("malformed_row"), Error);

  io::write_file(path, "id\ttimestamp\treason\tdepartment\ttext\tprofile\nt-1\tsoon\tr\td\tx\t{}\n");
  CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("line 2"), Error);

  CHECK_THROWS_WITH_AS(read_dataset(scratch("missing.tsv")), doctest::Contains("io_error"), Error);
}

TEST_CASE("corpus directory layout") {
  const auto dir = scratch("layout");
  fs::remove_all(dir);
  const auto corpus = generate(small_spec(200));
  write_corpus(corpus, default_catalog(), dir);
  for (const char* name : {"dataset.tsv", "context.tsv", "embeddings_planted.bin", "embeddings_oracle.bin",
                           "departments.json", "schema.json", "heuristic.json"}) {
    CHECK(fs::exists(dir / name));
  }
  CHECK(context::read_annotations(dir / "context.tsv") == corpus.context);
  CHECK(reason::EmbeddingTable::load(dir / "embeddings_planted.bin") == corpus.planted);
}
