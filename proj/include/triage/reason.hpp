#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/corpus.hpp"
#include "triage/embeddings.hpp"
#include "triage/evalsim.hpp"
#include "triage/models.hpp"
#include "triage/tabular.hpp"

namespace triage::reason {

/// Reason codes the classifier predicts; class index = position in `kept`.
struct LabelCatalog {
  std::vector<std::string> reasons;  // every code seen before filtering, sorted
  std::vector<std::string> kept;     // sorted subset

  /// -1 when the code was filtered out.
  int index_of(const std::string& code) const;
  nlohmann::json to_json() const;
  static LabelCatalog from_json(const nlohmann::json& doc);
};

struct ClassFilter {
  LabelCatalog catalog;
  std::map<std::string, std::size_t> train_counts;
  std::size_t min_count = 0;
};

/// Keeps the labels with at least `min_count` training rows.
ClassFilter filter_classes(std::span<const std::string> training_labels, std::size_t min_count);

struct FilterCounts {
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

/// Removes rows whose reason was filtered out, in place.
FilterCounts drop_filtered(std::vector<corpus::Ticket>& rows, const LabelCatalog& catalog);

/// [text representation | tabular vector]; either half may be absent.
ml::FeatureRow build_features(const TextInput& input, const tabular::TabularRecord& record,
                              const EmbeddingProvider* provider, const tabular::FittedTransform* transform);

struct HeadConfig {
  enum class Kind { mlp, logistic };
  Kind kind = Kind::mlp;
  std::vector<std::size_t> hidden{64};
  ml::TrainConfig train;
  ml::Penalty penalty = ml::Penalty::l2;  // logistic head
  double C = 1.0;                         // logistic head
  bool use_text = true;
  bool use_tabular = true;

  nlohmann::json to_json() const;
  static HeadConfig from_json(const nlohmann::json& doc);
};

struct ReasonModel {
  std::shared_ptr<const EmbeddingProvider> provider;  // null when text is unused
  std::optional<tabular::FittedTransform> transform;  // empty when tabular data is unused
  ml::Classifier head;
  LabelCatalog labels;

  std::size_t input_dimension() const;
  ml::FeatureRow features(const corpus::Ticket& ticket) const;

  /// reason.json plus head.bin and any provider side files.
  void save(const std::filesystem::path& dir) const;
  static ReasonModel load(const std::filesystem::path& dir);
};

struct ReasonTrainResult {
  ReasonModel model;
  ml::TrainLog log;
  double validation_top1 = 0.0;
};

/// Fits the tabular transform on `train` only, then the head on fused vectors.
/// Both row sets must already be restricted to `labels.kept`.
ReasonTrainResult train_reason_model(std::span<const corpus::Ticket> train, std::span<const corpus::Ticket> validation,
                                     std::shared_ptr<const EmbeddingProvider> provider,
                                     const tabular::FeatureSchema& schema, const LabelCatalog& labels,
                                     const HeadConfig& config);

struct Prediction {
  std::vector<std::pair<std::string, double>> top;  // descending; ties by class index
  ml::DenseVector probabilities;                    // over labels.kept
};

/// Indices of the k largest values, descending, lower index first on ties.
std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k);

Prediction predict_reasons(const ReasonModel& model, const TextInput& input, const tabular::TabularRecord& record,
                           std::size_t k);
Prediction predict_reasons(const ReasonModel& model, const corpus::Ticket& ticket, std::size_t k);

}  // namespace triage::reason
