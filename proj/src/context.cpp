#include "triage/context.hpp"

#include <algorithm>
#include <numeric>

#include "triage/error.hpp"
#include "triage/io.hpp"
#include "triage/rng.hpp"

namespace triage::context {

using nlohmann::json;

std::string to_string(ContextLabel label) {
  switch (label) {
    case ContextLabel::has_context: return "has_context";
    case ContextLabel::no_context: return "no_context";
    case ContextLabel::returning_client: return "returning_client";
    case ContextLabel::low_value: return "low_value";
  }
  return "unknown";
}

ContextLabel parse_label(std::string_view name) {
  for (auto label : {ContextLabel::has_context, ContextLabel::no_context, ContextLabel::returning_client,
                     ContextLabel::low_value}) {
    if (name == to_string(label)) return label;
  }
  throw Error(ErrorCode::invalid_argument, "unknown context label '" + std::string(name) + "'");
}

void write_annotations(std::span<const ContextAnnotation> annotations, const std::filesystem::path& path) {
  std::string out = "message\tlabel\n";
  for (const auto& a : annotations) out += io::escape_field(a.message) + '\t' + to_string(a.label) + '\n';
  io::write_file(path, out);
}

std::vector<ContextAnnotation> read_annotations(const std::filesystem::path& path) {
  io::LineReader reader(path);
  std::string line;
  if (!reader.next(line) || line != "message\tlabel") {
    throw Error(ErrorCode::malformed_row, path.string() + ": line 1: expected header 'message<TAB>label'");
  }
  std::vector<ContextAnnotation> out;
  while (reader.next(line)) {
    const auto fields = io::split_tabs(line);
    const auto where = path.string() + ": line " + std::to_string(reader.line_number());
    if (fields.size() != 2) throw Error(ErrorCode::malformed_row, where + ": expected 2 fields");
    try {
      out.push_back({io::unescape_field(fields[0]), parse_label(fields[1])});
    } catch (const Error& e) {
      throw Error(ErrorCode::malformed_row, where + ": " + e.what());
    }
  }
  return out;
}

BinaryCorpus map_labels(std::span<const ContextAnnotation> annotations) {
  BinaryCorpus out;
  for (const auto& a : annotations) {
    switch (a.label) {
      case ContextLabel::has_context:
        out.messages.push_back(a.message);
        out.labels.push_back(1);
        ++out.positives;
        break;
      case ContextLabel::no_context:
      case ContextLabel::low_value:
        out.messages.push_back(a.message);
        out.labels.push_back(0);
        ++out.negatives;
        break;
      case ContextLabel::returning_client: ++out.dropped; break;
    }
  }
  if (out.messages.empty()) out.warning = "no usable annotations: every row was returning_client or the input was empty";
  return out;
}

namespace {

ml::FeatureRow featurize(const ContextModel& model, std::string_view message) {
  return ml::FeatureRow::from_sparse(text::vectorize(text::preprocess(message, model.stopwords), model.vocabulary));
}

ml::Dataset build_dataset(const ContextModel& model, const BinaryCorpus& corpus, std::span<const std::size_t> rows) {
  ml::Dataset data;
  data.dimension = model.vocabulary.size();
  data.num_classes = 2;
  for (auto i : rows) data.add(featurize(model, corpus.messages[i]), corpus.labels[i]);
  return data;
}

ml::LinearModel fit(const ml::Dataset& data, const json& config, std::uint64_t seed) {
  ml::TrainConfig tc;
  tc.seed = seed;
  tc.class_weight = ml::parse_class_weight_mode(config.at("class_weight").get<std::string>());
  return ml::train_logistic(data, tc, ml::parse_penalty(config.at("penalty").get<std::string>()),
                            config.at("C").get<double>());
}

}  // namespace

json ContextTrainReport::to_json() const {
  json trials = json::array();
  for (const auto& t : trace) {
    trials.push_back({{"index", t.index}, {"config", t.config}, {"score", t.score ? json(*t.score) : json(nullptr)},
                      {"error", t.error}});
  }
  return {{"train_rows", train_rows},
          {"validation_rows", validation_rows},
          {"test_rows", test_rows},
          {"train_accuracy", train_accuracy},
          {"validation_accuracy", validation_accuracy},
          {"default_validation_accuracy", default_validation_accuracy},
          {"test_accuracy", test_accuracy ? json(*test_accuracy) : json(nullptr)},
          {"positives", positives},
          {"negatives", negatives},
          {"dropped", dropped},
          {"best_config", best_config},
          {"trials", trials}};
}

ContextTrainResult train_context_model(std::span<const ContextAnnotation> annotations,
                                       const text::StopwordSet& stopwords, const ContextTrainOptions& options) {
  const auto corpus = map_labels(annotations);
  if (corpus.positives == 0 || corpus.negatives == 0) {
    throw Error(ErrorCode::degenerate_dataset, "context corpus needs at least one example of each class (" +
                                                   std::to_string(corpus.positives) + " positive, " +
                                                   std::to_string(corpus.negatives) + " negative)");
  }
  const std::size_t n = corpus.messages.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(options.seed);
  rng.shuffle(order);

  std::vector<std::size_t> train, val, test;
  const bool tiny = n < 10;
  if (tiny) {
    train = order;
    val = order;
  } else {
    const auto n_test = static_cast<std::size_t>(std::round(options.test_fraction * static_cast<double>(n)));
    const auto n_fit = n - n_test;
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(options.validation_fraction *
                                                                                    static_cast<double>(n_fit))));
    train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_fit - n_val));
    val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_fit - n_val), order.begin() + static_cast<std::ptrdiff_t>(n_fit));
    test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_fit), order.end());
  }
  std::vector<std::size_t> fit_rows = train;
  if (!tiny) fit_rows.insert(fit_rows.end(), val.begin(), val.end());

  ContextModel model;
  model.stopwords = stopwords;
  model.threshold = options.threshold;
  std::vector<text::TokenSeq> docs;
  for (auto i : fit_rows) docs.push_back(text::preprocess(corpus.messages[i], stopwords));
  model.vocabulary = text::build_vocabulary(docs, options.n_max, options.vocabulary_size);

  const auto train_data = build_dataset(model, corpus, train);
  const auto val_data = build_dataset(model, corpus, val);

  eval::SearchSpace space;
  space.params.push_back(eval::Hyperparameter::log_range("C", 1e-2, 1e2, 5));
  space.params.push_back(eval::Hyperparameter::one_of("penalty", {"l2", "l1"}));
  space.params.push_back(eval::Hyperparameter::one_of("class_weight", {"none", "balanced"}));
  space.budget = options.search_budget;
  const auto result = eval::search(
      space,
      [&](const json& config) { return ml::top1_accuracy(fit(train_data, config, options.seed), val_data); },
      options.strategy, options.seed);

  const json default_config{{"C", 1.0}, {"penalty", "l2"}, {"class_weight", "none"}};
  const double default_accuracy = ml::top1_accuracy(fit(train_data, default_config, options.seed), val_data);

  const auto fit_data = tiny ? train_data : build_dataset(model, corpus, fit_rows);
  model.classifier = fit(fit_data, result.best_config, options.seed);
  model.hyperparameters = result.best_config;

  ContextTrainReport report;
  report.train_rows = train.size();
  report.validation_rows = tiny ? 0 : val.size();
  report.test_rows = test.size();
  report.train_accuracy = ml::top1_accuracy(model.classifier, fit_data);
  report.validation_accuracy = result.best_score;
  report.default_validation_accuracy = default_accuracy;
  if (!test.empty()) report.test_accuracy = ml::top1_accuracy(model.classifier, build_dataset(model, corpus, test));
  report.positives = corpus.positives;
  report.negatives = corpus.negatives;
  report.dropped = corpus.dropped;
  report.best_config = result.best_config;
  report.trace = result.trace;
  return {std::move(model), std::move(report)};
}

ContextVerdict evaluate_context(const ContextModel& model, std::string_view message) {
  const auto probs = ml::predict_proba(model.classifier, featurize(model, message));
  const double p = probs[1];
  return {p >= model.threshold, p};
}

void ContextModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  vocabulary.save(dir / "vocabulary.txt");
  ml::save_model(classifier, dir / "classifier.bin");
  std::vector<std::string> words(stopwords.begin(), stopwords.end());
  std::sort(words.begin(), words.end());
  io::save_json({{"threshold", threshold}, {"hyperparameters", hyperparameters}, {"stopwords", words}},
                dir / "context.json");
}

ContextModel ContextModel::load(const std::filesystem::path& dir) {
  ContextModel model;
  model.vocabulary = text::Vocabulary::load(dir / "vocabulary.txt");
  auto classifier = ml::load_model(dir / "classifier.bin");
  if (!std::holds_alternative<ml::LinearModel>(classifier)) {
    throw Error(ErrorCode::schema_violation, "context classifier must be a linear model");
  }
  model.classifier = std::get<ml::LinearModel>(std::move(classifier));
  const auto meta = io::load_json(dir / "context.json");
  try {
    model.threshold = meta.at("threshold").get<double>();
    model.hyperparameters = meta.value("hyperparameters", json::object());
    for (const auto& w : meta.at("stopwords")) model.stopwords.insert(w.get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, "context.json: " + std::string(e.what()));
  }
  if (model.classifier.num_classes != 2 || model.classifier.dimension != model.vocabulary.size()) {
    throw Error(ErrorCode::dimension_mismatch, "context classifier does not match its vocabulary");
  }
  if (!(model.threshold > 0.0 && model.threshold < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "context threshold must lie in (0, 1)");
  }
  return model;
}

}  // namespace triage::context
