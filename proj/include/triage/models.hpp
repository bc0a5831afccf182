#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "triage/text.hpp"

namespace triage::ml {

using DenseVector = std::vector<double>;

/// Sparse real-valued feature row. Indices strictly increasing.
struct FeatureRow {
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  static FeatureRow from_dense(std::span<const double> dense);
  static FeatureRow from_sparse(const text::SparseVector& sparse);

  /// Appends dense values at column offset `offset`, skipping exact zeros.
  void append_dense(std::size_t offset, std::span<const double> dense);
  /// Appends all values of `other` shifted by `offset`.
  void append(std::size_t offset, const FeatureRow& other);

  DenseVector to_dense(std::size_t dimension) const;
  std::size_t nnz() const { return index.size(); }
};

struct Dataset {
  std::size_t dimension = 0;
  std::size_t num_classes = 0;
  std::vector<FeatureRow> rows;
  std::vector<int> labels;

  std::size_t size() const { return rows.size(); }
  void add(FeatureRow row, int label);
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Throws on shape mismatches, out-of-range indices or labels, non-finite values.
  void validate() const;
};

enum class Penalty { none, l1, l2 };
enum class ClassWeightMode { none, balanced };

std::string to_string(Penalty penalty);
Penalty parse_penalty(const std::string& name);
std::string to_string(ClassWeightMode mode);
ClassWeightMode parse_class_weight_mode(const std::string& name);

/// balanced: w_c = N / (K * N_c). Throws class_absent when a class has no rows.
std::vector<double> class_weights(std::span<const int> labels, std::size_t num_classes, ClassWeightMode mode);

struct TrainConfig {
  std::uint64_t seed = 0;
  // Logistic regression (full batch).
  std::size_t max_iterations = 500;
  double tolerance = 1e-6;
  // MLP (mini-batch Adam).
  std::size_t max_epochs = 200;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::size_t patience = 5;
  double validation_fraction = 0.1;
  std::optional<Dataset> validation;
  double l2 = 1e-4;
  ClassWeightMode class_weight = ClassWeightMode::none;
};

/// Softmax regression. Weights are stored feature-major (D x K) so sparse rows
/// touch contiguous memory; `weight(k, d)` gives the conceptual K x D view.
struct LinearModel {
  std::size_t num_classes = 0;
  std::size_t dimension = 0;
  std::vector<double> params;  // D*K weights then K biases
  Penalty penalty = Penalty::l2;
  double C = 1.0;
  std::vector<double> class_weights;

  static LinearModel zeros(std::size_t num_classes, std::size_t dimension);

  std::size_t weight_count() const { return num_classes * dimension; }
  double weight(std::size_t k, std::size_t d) const { return params[d * num_classes + k]; }
  double bias(std::size_t k) const { return params[weight_count() + k]; }
  double weight_norm() const;
};

/// Fully connected rectifier network with a softmax output.
struct MLPModel {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., classes
  std::vector<double> params;            // per layer: W (in x out), then b (out)
  double l2 = 0.0;
  std::vector<double> class_weights;

  static MLPModel initialize(std::size_t input, std::span<const std::size_t> hidden, std::size_t classes,
                             std::uint64_t seed);

  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t num_classes() const { return layer_sizes.back(); }
  std::size_t dimension() const { return layer_sizes.front(); }
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const { return weight_offset(layer) + layer_sizes[layer] * layer_sizes[layer + 1]; }
};

using Classifier = std::variant<LinearModel, MLPModel>;

std::size_t num_classes(const Classifier& model);
std::size_t dimension(const Classifier& model);

DenseVector softmax(std::span<const double> logits);

DenseVector predict_proba(const LinearModel& model, const FeatureRow& x);
DenseVector predict_proba(const MLPModel& model, const FeatureRow& x);
DenseVector predict_proba(const Classifier& model, const FeatureRow& x);
DenseVector predict_proba(const Classifier& model, std::span<const double> x);

double top1_accuracy(const Classifier& model, const Dataset& data);

/// Class-weighted mean cross-entropy over `rows` plus 0.5 * reg_scale * ||W||^2
/// (biases excluded). Writes the gradient when `grad` is non-empty.
double objective(const LinearModel& model, const Dataset& data, std::span<const std::size_t> rows, double reg_scale,
                 std::span<double> grad);
double objective(const MLPModel& model, const Dataset& data, std::span<const std::size_t> rows, double reg_scale,
                 std::span<double> grad);

struct TrainLog {
  std::vector<double> loss;  // objective after each accepted iteration / epoch
  std::vector<double> validation_accuracy;
  std::size_t best_epoch = 0;
};

/// Minimizes class-weighted cross-entropy + penalty / (C * N). L-BFGS for
/// l2/none, proximal gradient with backtracking for l1.
LinearModel train_logistic(const Dataset& data, const TrainConfig& config, Penalty penalty, double C,
                           TrainLog* log = nullptr);

MLPModel train_mlp(const Dataset& data, const TrainConfig& config, std::span<const std::size_t> hidden_sizes,
                   TrainLog* log = nullptr);

/// Max relative error between the analytic gradient and central differences
/// over up to `samples` randomly chosen parameters. The relative error is
/// |a - n| / max(|a| + |n|, 1e-5).
double gradient_check(const Classifier& model, const Dataset& batch, double epsilon, std::uint64_t seed = 0,
                      std::size_t samples = 50);

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::string serialize_model(const Classifier& model);
Classifier deserialize_model(std::string_view bytes);
void save_model(const Classifier& model, const std::filesystem::path& path);
Classifier load_model(const std::filesystem::path& path);

}  // namespace triage::ml
