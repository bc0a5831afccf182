#include "triage/reason.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "triage/error.hpp"
#include "triage/io.hpp"

namespace triage::reason {

using nlohmann::json;

int LabelCatalog::index_of(const std::string& code) const {
  const auto it = std::lower_bound(kept.begin(), kept.end(), code);
  return it != kept.end() && *it == code ? static_cast<int>(it - kept.begin()) : -1;
}

json LabelCatalog::to_json() const { return {{"reasons", reasons}, {"kept", kept}}; }

LabelCatalog LabelCatalog::from_json(const json& doc) {
  LabelCatalog c;
  try {
    c.reasons = doc.at("reasons").get<std::vector<std::string>>();
    c.kept = doc.at("kept").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("label catalog: ") + e.what());
  }
  if (c.kept.empty()) throw Error(ErrorCode::schema_violation, "label catalog keeps no reasons");
  if (!std::is_sorted(c.kept.begin(), c.kept.end()) || !std::is_sorted(c.reasons.begin(), c.reasons.end()) ||
      !std::includes(c.reasons.begin(), c.reasons.end(), c.kept.begin(), c.kept.end())) {
    throw Error(ErrorCode::schema_violation, "label catalog kept set must be a sorted subset of its reasons");
  }
  return c;
}

ClassFilter filter_classes(std::span<const std::string> training_labels, std::size_t min_count) {
  if (min_count < 1) throw Error(ErrorCode::invalid_argument, "min_count must be at least 1");
  ClassFilter f;
  f.min_count = min_count;
  for (const auto& label : training_labels) ++f.train_counts[label];
  for (const auto& [label, count] : f.train_counts) {
    f.catalog.reasons.push_back(label);
    if (count >= min_count) f.catalog.kept.push_back(label);
  }
  if (f.catalog.kept.empty()) {
    throw Error(ErrorCode::degenerate_dataset,
                "no class has " + std::to_string(min_count) + " training rows; the filter would keep nothing");
  }
  return f;
}

FilterCounts drop_filtered(std::vector<corpus::Ticket>& rows, const LabelCatalog& catalog) {
  FilterCounts counts;
  const auto before = rows.size();
  std::erase_if(rows, [&](const corpus::Ticket& t) { return catalog.index_of(t.reason) < 0; });
  counts.kept = rows.size();
  counts.dropped = before - rows.size();
  return counts;
}

ml::FeatureRow build_features(const TextInput& input, const tabular::TabularRecord& record,
                              const EmbeddingProvider* provider, const tabular::FittedTransform* transform) {
  ml::FeatureRow row;
  std::size_t offset = 0;
  if (provider != nullptr) {
    const auto text_row = provider->embed(input);
    if (!text_row.index.empty() && text_row.index.back() >= provider->dimension()) {
      throw Error(ErrorCode::dimension_mismatch, "provider returned a column beyond its dimension");
    }
    row.append(0, text_row);
    offset = provider->dimension();
  }
  if (transform != nullptr) row.append_dense(offset, tabular::transform(*transform, record));
  return row;
}

json HeadConfig::to_json() const {
  return {{"kind", kind == Kind::mlp ? "mlp" : "logistic"},
          {"hidden", hidden},
          {"penalty", ml::to_string(penalty)},
          {"C", C},
          {"use_text", use_text},
          {"use_tabular", use_tabular},
          {"seed", train.seed},
          {"max_epochs", train.max_epochs},
          {"batch_size", train.batch_size},
          {"learning_rate", train.learning_rate},
          {"patience", train.patience},
          {"l2", train.l2},
          {"max_iterations", train.max_iterations},
          {"class_weight", ml::to_string(train.class_weight)}};
}

HeadConfig HeadConfig::from_json(const json& doc) {
  HeadConfig c;
  try {
    const auto kind = doc.value("kind", std::string("mlp"));
    if (kind != "mlp" && kind != "logistic") throw Error(ErrorCode::invalid_argument, "unknown head kind '" + kind + "'");
    c.kind = kind == "mlp" ? Kind::mlp : Kind::logistic;
    c.hidden = doc.value("hidden", c.hidden);
    c.penalty = ml::parse_penalty(doc.value("penalty", std::string("l2")));
    c.C = doc.value("C", c.C);
    c.use_text = doc.value("use_text", c.use_text);
    c.use_tabular = doc.value("use_tabular", c.use_tabular);
    c.train.seed = doc.value("seed", c.train.seed);
    c.train.max_epochs = doc.value("max_epochs", c.train.max_epochs);
    c.train.batch_size = doc.value("batch_size", c.train.batch_size);
    c.train.learning_rate = doc.value("learning_rate", c.train.learning_rate);
    c.train.patience = doc.value("patience", c.train.patience);
    c.train.l2 = doc.value("l2", c.train.l2);
    c.train.max_iterations = doc.value("max_iterations", c.train.max_iterations);
    c.train.class_weight = ml::parse_class_weight_mode(doc.value("class_weight", std::string("none")));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("head config: ") + e.what());
  }
  if (!c.use_text && !c.use_tabular) throw Error(ErrorCode::invalid_argument, "head needs text or tabular features");
  return c;
}

std::size_t ReasonModel::input_dimension() const {
  return (provider ? provider->dimension() : 0) + (transform ? transform->dimension : 0);
}

ml::FeatureRow ReasonModel::features(const corpus::Ticket& ticket) const {
  return build_features({ticket.id, ticket.text}, ticket.profile, provider.get(), transform ? &*transform : nullptr);
}

namespace {

ml::Dataset make_dataset(const ReasonModel& model, std::span<const corpus::Ticket> rows) {
  ml::Dataset data;
  data.dimension = model.input_dimension();
  data.num_classes = model.labels.kept.size();
  for (const auto& t : rows) {
    const int label = model.labels.index_of(t.reason);
    if (label < 0) throw Error(ErrorCode::invalid_argument, "row " + t.id + " has filtered reason '" + t.reason + "'");
    data.add(model.features(t), label);
  }
  return data;
}

}  // namespace

ReasonTrainResult train_reason_model(std::span<const corpus::Ticket> train, std::span<const corpus::Ticket> validation,
                                     std::shared_ptr<const EmbeddingProvider> provider,
                                     const tabular::FeatureSchema& schema, const LabelCatalog& labels,
                                     const HeadConfig& config) {
  if (train.empty()) throw Error(ErrorCode::empty_input, "no training rows");
  if (!config.use_text && !config.use_tabular) throw Error(ErrorCode::invalid_argument, "head needs text or tabular features");
  if (config.use_text && !provider) throw Error(ErrorCode::invalid_argument, "text features requested without a provider");
  ReasonModel model;
  model.labels = labels;
  if (config.use_text) model.provider = std::move(provider);
  if (config.use_tabular) {
    std::vector<tabular::TabularRecord> records;
    records.reserve(train.size());
    for (const auto& t : train) records.push_back(t.profile);
    model.transform = tabular::fit(schema, records);
  }
  const auto train_data = make_dataset(model, train);
  ml::TrainConfig tc = config.train;
  if (!validation.empty()) tc.validation = make_dataset(model, validation);

  ReasonTrainResult result;
  if (config.kind == HeadConfig::Kind::mlp) {
    model.head = ml::train_mlp(train_data, tc, config.hidden, &result.log);
  } else {
    model.head = ml::train_logistic(train_data, tc, config.penalty, config.C, &result.log);
  }
  if (tc.validation) result.validation_top1 = ml::top1_accuracy(model.head, *tc.validation);
  result.model = std::move(model);
  return result;
}

std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  if (k < 1 || k > values.size()) {
    throw Error(ErrorCode::invalid_argument, "k must lie in [1, " + std::to_string(values.size()) + "]");
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return values[a] != values[b] ? values[a] > values[b] : a < b; });
  order.resize(k);
  return order;
}

Prediction predict_reasons(const ReasonModel& model, const TextInput& input, const tabular::TabularRecord& record,
                           std::size_t k) {
  Prediction p;
  p.probabilities = ml::predict_proba(
      model.head, build_features(input, record, model.provider.get(), model.transform ? &*model.transform : nullptr));
  for (auto i : top_k_indices(p.probabilities, k)) p.top.emplace_back(model.labels.kept[i], p.probabilities[i]);
  return p;
}

Prediction predict_reasons(const ReasonModel& model, const corpus::Ticket& ticket, std::size_t k) {
  return predict_reasons(model, {ticket.id, ticket.text}, ticket.profile, k);
}

void ReasonModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json doc{{"labels", labels.to_json()}, {"head", "head.bin"}};
  doc["provider"] = provider ? provider->config() : json(nullptr);
  doc["tabular"] = transform ? transform->to_json() : json(nullptr);
  if (provider) provider->save_assets(dir);
  ml::save_model(head, dir / "head.bin");
  io::save_json(doc, dir / "reason.json");
}

ReasonModel ReasonModel::load(const std::filesystem::path& dir) {
  const auto doc = io::load_json(dir / "reason.json");
  ReasonModel model;
  try {
    model.labels = LabelCatalog::from_json(doc.at("labels"));
    if (!doc.at("provider").is_null()) model.provider = make_provider(doc.at("provider"), dir);
    if (!doc.at("tabular").is_null()) model.transform = tabular::FittedTransform::from_json(doc.at("tabular"));
    model.head = ml::load_model(dir / doc.at("head").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, (dir / "reason.json").string() + ": " + e.what());
  }
  if (!model.provider && !model.transform) throw Error(ErrorCode::schema_violation, "reason model has no inputs");
  if (ml::dimension(model.head) != model.input_dimension()) {
    throw Error(ErrorCode::dimension_mismatch, "reason head expects " + std::to_string(ml::dimension(model.head)) +
                                                   " inputs, features provide " +
                                                   std::to_string(model.input_dimension()));
  }
  if (ml::num_classes(model.head) != model.labels.kept.size()) {
    throw Error(ErrorCode::dimension_mismatch, "reason head class count differs from the kept label set");
  }
  return model;
}

}  // namespace triage::reason
