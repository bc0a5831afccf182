#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "triage/error.hpp"
#include "triage/pipeline.hpp"
#include "triage/reason.hpp"
#include "triage/rng.hpp"

using namespace triage;
using namespace triage::reason;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> labels_with_counts(const std::vector<std::pair<std::string, std::size_t>>& counts) {
  std::vector<std::string> out;
  for (const auto& [label, n] : counts) out.insert(out.end(), n, label);
  return out;
}

tabular::FeatureSchema tiny_schema() {
  return tabular::FeatureSchema::from_json(nlohmann::json::parse(R"({"columns": [
    {"name": "kind", "kind": "categorical", "categories": ["a", "b"]},
    {"name": "age", "kind": "numeric"},
    {"name": "flag", "kind": "categorical"}
  ]})"));
}

tabular::TabularRecord record(const std::string& kind, double age, const std::string& flag) {
  tabular::TabularRecord r;
  r.values["kind"] = kind;
  r.values["age"] = age;
  r.values["flag"] = flag;
  return r;
}

/// Tabular-only model whose head is a fixed bias vector.
ReasonModel bias_model(const std::vector<double>& probabilities) {
  ReasonModel model;
  model.labels.kept = {"r1", "r2", "r3"};
  model.labels.reasons = model.labels.kept;
  const std::vector<tabular::TabularRecord> records{record("a", 1, "x"), record("b", 3, "y")};
  model.transform = tabular::fit(tiny_schema(), records);
  auto head = ml::LinearModel::zeros(3, model.transform->dimension);
  for (std::size_t k = 0; k < 3; ++k) head.params[head.weight_count() + k] = std::log(probabilities[k]);
  model.head = head;
  return model;
}

struct TrainedCorpus {
  pipeline::PreparedData data;
  ReasonTrainResult fusion;
  std::vector<corpus::Ticket> all;
};

const TrainedCorpus& trained() {
  static const TrainedCorpus t = [] {
    TrainedCorpus out;
    corpus::CorpusSpec spec;
    spec.context_size = 0;
    out.all = corpus::generate(spec).tickets;
    out.data = pipeline::prepare(out.all, eval::SplitSpec{}, 50);
    std::vector<std::string> texts;
    for (const auto& tk : out.data.split.train) texts.push_back(tk.text);
    auto stop = text::load_stopwords(fs::path(TRIAGE_SOURCE_DIR) / "config/stopwords_pt.txt");
    auto bow = std::make_shared<BowProvider>(BowProvider::fit(texts, stop));
    HeadConfig head;
    head.train.seed = 1;
    out.fusion = train_reason_model(out.data.split.train, out.data.split.val, bow, corpus::profile_schema(),
                                    out.data.filter.catalog, head);
    return out;
  }();
  return t;
}

}  // namespace

TEST_CASE("filter_classes keeps the boundary class") {
  const auto labels = labels_with_counts({{"a", 60}, {"b", 49}, {"c", 50}});
  const auto f = filter_classes(labels, 50);
  CHECK(f.catalog.kept == std::vector<std::string>{"a", "c"});
  CHECK(f.catalog.reasons == std::vector<std::string>{"a", "b", "c"});
  CHECK(f.train_counts.at("b") == 49);
  CHECK(filter_classes(labels, 1).catalog.kept.size() == 3);
  CHECK_THROWS_AS(filter_classes(labels, 0), Error);
  CHECK_THROWS_WITH_AS(filter_classes(labels, 61), doctest::Contains("degenerate_dataset"), Error);
}

TEST_CASE("filter_classes on a 306-class long tail") {
  std::vector<std::pair<std::string, std::size_t>> counts;
  for (int i = 0; i < 235; ++i) counts.emplace_back("keep" + std::to_string(i), 50 + static_cast<std::size_t>(i));
  for (int i = 0; i < 71; ++i) counts.emplace_back("drop" + std::to_string(i), 1 + static_cast<std::size_t>(i % 49));
  const auto f = filter_classes(labels_with_counts(counts), 50);
  CHECK(f.catalog.reasons.size() == 306);
  CHECK(f.catalog.kept.size() == 235);
}

TEST_CASE("drop_filtered conserves rows") {
  LabelCatalog catalog;
  catalog.reasons = {"a", "b", "c"};
  catalog.kept = {"a", "c"};
  std::vector<corpus::Ticket> rows(10);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].reason = std::string(1, static_cast<char>('a' + i % 3));
  const auto counts = drop_filtered(rows, catalog);
  CHECK(counts.kept + counts.dropped == 10);
  CHECK(counts.dropped == 3);
  CHECK(rows.size() == 7);
  CHECK(catalog.index_of("b") == -1);
  CHECK(catalog.index_of("c") == 1);
}

TEST_CASE("build_features concatenates text and tabular halves") {
  std::vector<std::string> words;
  for (int i = 0; i < 5000; ++i) words.push_back("w" + std::to_string(i));
  const BowProvider bow(text::Vocabulary(words, 1, 5000), {});
  tabular::FeatureSchema schema;
  for (int i = 0; i < 20; ++i) schema.columns.push_back({"n" + std::to_string(i), tabular::ColumnKind::numeric, {}});
  tabular::TabularRecord r;
  for (int i = 0; i < 20; ++i) r.values["n" + std::to_string(i)] = static_cast<double>(i);
  const std::vector<tabular::TabularRecord> records{r};
  const auto fitted = tabular::fit(schema, records);
  CHECK(fitted.dimension == 20);
  const auto row = build_features({"t", "w1 w4999 w1"}, r, &bow, &fitted);
  const auto dense = row.to_dense(5020);
  CHECK(dense.size() == 5020);
  CHECK(dense[1] == 2.0);
  CHECK(dense[4999] == 1.0);

  const auto table = std::make_shared<const EmbeddingTable>(EmbeddingTable(3));
  const FileProvider file(table, "none");
  CHECK_THROWS_WITH_AS(build_features({"t-99", "x"}, r, &file, &fitted), doctest::Contains("missing_embedding"), Error);
}

TEST_CASE("predict_reasons orders by probability") {
  const auto model = bias_model({0.5, 0.3, 0.2});
  const auto p = predict_reasons(model, {"id", "ignored"}, record("a", 2, "x"), 3);
  REQUIRE(p.top.size() == 3);
  CHECK(p.top[0].first == "r1");
  CHECK(p.top[0].second == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p.top[1].first == "r2");
  CHECK(p.top[1].second == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(p.top[2].first == "r3");
  CHECK(p.top[2].second == doctest::Approx(0.2).epsilon(1e-12));
  CHECK_THROWS_AS(predict_reasons(model, {"id", ""}, record("a", 2, "x"), 0), Error);
  CHECK_THROWS_AS(predict_reasons(model, {"id", ""}, record("a", 2, "x"), 4), Error);
}

TEST_CASE("top-k ties fall to the lower class index") {
  const std::vector<double> v{0.2, 0.4, 0.2, 0.4};
  CHECK(top_k_indices(v, 4) == std::vector<std::size_t>{1, 3, 0, 2});
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> values(12);
    for (auto& x : values) x = static_cast<double>(rng.below(5));
    for (std::size_t k = 1; k < values.size(); ++k) {
      const auto a = top_k_indices(values, k);
      const auto b = top_k_indices(values, k + 1);
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
    const auto argmax = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
    CHECK(top_k_indices(values, 1).front() == argmax);
  }
}

TEST_CASE("permuting schema columns with the head leaves predictions unchanged") {
  Rng rng(21);
  std::vector<tabular::TabularRecord> records;
  for (int i = 0; i < 30; ++i) {
    records.push_back(record(rng.bernoulli(0.5) ? "a" : "b", rng.uniform(0, 10), rng.bernoulli(0.3) ? "x" : "y"));
  }
  const auto schema = tiny_schema();
  auto permuted_schema = schema;
  std::swap(permuted_schema.columns[0], permuted_schema.columns[2]);
  const auto fitted = tabular::fit(schema, records);
  const auto permuted = tabular::fit(permuted_schema, records);

  auto head = ml::LinearModel::zeros(3, fitted.dimension);
  for (auto& w : head.params) w = rng.normal();
  auto moved = head;
  for (const auto& col : fitted.columns) {
    const auto other = std::find_if(permuted.columns.begin(), permuted.columns.end(),
                                    [&](const auto& c) { return c.name == col.name; });
    for (std::size_t s = 0; s < col.width(); ++s) {
      for (std::size_t k = 0; k < 3; ++k) moved.params[(other->offset + s) * 3 + k] = head.params[(col.offset + s) * 3 + k];
    }
  }
  ReasonModel a, b;
  a.labels.kept = b.labels.kept = {"r1", "r2", "r3"};
  a.transform = fitted;
  a.head = head;
  b.transform = permuted;
  b.head = moved;
  for (const auto& r : records) {
    const auto pa = predict_reasons(a, {"", ""}, r, 3);
    const auto pb = predict_reasons(b, {"", ""}, r, 3);
    for (std::size_t k = 0; k < 3; ++k) CHECK(pa.probabilities[k] == doctest::Approx(pb.probabilities[k]).epsilon(1e-12));
  }
}

TEST_CASE("trained fusion model") {
  const auto& t = trained();
  const auto& model = t.fusion.model;
  CHECK(model.input_dimension() == ml::dimension(model.head));
  CHECK(ml::num_classes(model.head) == t.data.filter.catalog.kept.size());
  for (std::size_t i = 0; i < 50; ++i) {
    const auto p = predict_reasons(model, t.data.split.test[i], 3);
    CHECK(std::abs(std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0) - 1.0) < 1e-9);
    CHECK(p.top[0].second >= p.top[1].second);
    CHECK(p.top[1].second >= p.top[2].second);
  }
}

TEST_CASE("profile disambiguates the shared cancellation message") {
  const auto& model = trained().fusion.model;
  tabular::TabularRecord photographer, prospective;
  photographer.values = {{"is_photographer", std::string("true")},
                         {"is_registered_agent", std::string("false")},
                         {"active_visit_scheduled", std::string("false")},
                         {"last_auto_msg_type", std::string("partner_schedule")}};
  prospective.values = {{"is_photographer", std::string("false")},
                        {"is_registered_agent", std::string("false")},
                        {"active_visit_scheduled", std::string("true")},
                        {"last_auto_msg_type", std::string("visit_reminder")}};
  const std::string message = "preciso cancelar a visita de amanhã";
  const auto a = predict_reasons(model, {"x", message}, photographer, 1);
  const auto b = predict_reasons(model, {"x", message}, prospective, 1);
  CHECK(a.top[0].first == "ft_ag_alteracao");
  CHECK(b.top[0].first == "vi_cancelamento");
}

TEST_CASE("reason model persists") {
  const auto& t = trained();
  const auto dir = fs::temp_directory_path() / "triage_test_reason_model";
  fs::remove_all(dir);
  t.fusion.model.save(dir);
  const auto loaded = ReasonModel::load(dir);
  CHECK(loaded.labels.kept == t.fusion.model.labels.kept);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& ticket = t.data.split.test[i];
    CHECK(predict_reasons(loaded, ticket, 3).probabilities == predict_reasons(t.fusion.model, ticket, 3).probabilities);
  }
  io::write_file(dir / "head.bin", "junk");
  CHECK_THROWS_AS(ReasonModel::load(dir), Error);
}

TEST_CASE("head configuration round trip") {
  HeadConfig c;
  c.kind = HeadConfig::Kind::logistic;
  c.hidden = {8, 4};
  c.C = 3.5;
  c.use_text = false;
  c.train.class_weight = ml::ClassWeightMode::balanced;
  CHECK(HeadConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(HeadConfig::from_json({{"use_text", false}, {"use_tabular", false}}), Error);
  CHECK_THROWS_AS(HeadConfig::from_json({{"kind", "forest"}}), Error);
}
