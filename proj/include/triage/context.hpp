#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/evalsim.hpp"
#include "triage/models.hpp"
#include "triage/text.hpp"

namespace triage::context {

enum class ContextLabel { has_context, no_context, returning_client, low_value };

std::string to_string(ContextLabel label);
ContextLabel parse_label(std::string_view name);

struct ContextAnnotation {
  std::string message;
  ContextLabel label = ContextLabel::has_context;

  bool operator==(const ContextAnnotation&) const = default;
};

/// Tab-separated "message<TAB>label" lines under a header row; messages are
/// escaped like dataset text fields.
void write_annotations(std::span<const ContextAnnotation> annotations, const std::filesystem::path& path);
std::vector<ContextAnnotation> read_annotations(const std::filesystem::path& path);

struct BinaryCorpus {
  std::vector<std::string> messages;
  std::vector<int> labels;  // 1 = enough context
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t dropped = 0;
  std::string warning;
};

/// has_context -> 1; no_context, low_value -> 0; returning_client dropped.
BinaryCorpus map_labels(std::span<const ContextAnnotation> annotations);

struct ContextModel {
  text::Vocabulary vocabulary;
  text::StopwordSet stopwords;
  ml::LinearModel classifier;
  double threshold = 0.5;
  nlohmann::json hyperparameters = nlohmann::json::object();

  void save(const std::filesystem::path& dir) const;
  static ContextModel load(const std::filesystem::path& dir);
};

struct ContextTrainOptions {
  std::uint64_t seed = 42;
  std::size_t search_budget = 30;
  eval::SearchStrategy strategy = eval::SearchStrategy::random;
  double test_fraction = 0.2;
  double validation_fraction = 0.2;  // share of the non-test rows used to score configurations
  std::size_t vocabulary_size = 5000;
  int n_max = 3;
  double threshold = 0.5;
};

struct ContextTrainReport {
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
  std::size_t test_rows = 0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
  double default_validation_accuracy = 0.0;  // C = 1, l2, unweighted
  std::optional<double> test_accuracy;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t dropped = 0;
  nlohmann::json best_config;
  std::vector<eval::TrialRecord> trace;

  nlohmann::json to_json() const;
};

struct ContextTrainResult {
  ContextModel model;
  ContextTrainReport report;
};

/// Seeded 80/20 split, hyperparameter search on a validation slice of the
/// training part, refit of the best configuration on the whole training part.
/// Corpora too small to split train on everything.
ContextTrainResult train_context_model(std::span<const ContextAnnotation> annotations,
                                       const text::StopwordSet& stopwords, const ContextTrainOptions& options);

struct ContextVerdict {
  bool has_context = false;
  double p_positive = 0.0;
};

ContextVerdict evaluate_context(const ContextModel& model, std::string_view message);

}  // namespace triage::context
