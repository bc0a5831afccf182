#include "triage/models.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "triage/error.hpp"
#include "triage/rng.hpp"

namespace triage::ml {

// ---------------------------------------------------------------------------
// Feature rows and datasets
// ---------------------------------------------------------------------------

FeatureRow FeatureRow::from_dense(std::span<const double> dense) {
  FeatureRow row;
  row.append_dense(0, dense);
  return row;
}

FeatureRow FeatureRow::from_sparse(const text::SparseVector& sparse) {
  FeatureRow row;
  row.index.reserve(sparse.pairs.size());
  row.value.reserve(sparse.pairs.size());
  for (const auto& [index, count] : sparse.pairs) {
    row.index.push_back(index);
    row.value.push_back(static_cast<double>(count));
  }
  return row;
}

void FeatureRow::append_dense(std::size_t offset, std::span<const double> dense) {
  for (std::size_t i = 0; i < dense.size(); ++i) {
    if (dense[i] == 0.0) continue;
    index.push_back(static_cast<std::uint32_t>(offset + i));
    value.push_back(dense[i]);
  }
}

void FeatureRow::append(std::size_t offset, const FeatureRow& other) {
  for (std::size_t i = 0; i < other.index.size(); ++i) {
    index.push_back(static_cast<std::uint32_t>(offset + other.index[i]));
    value.push_back(other.value[i]);
  }
}

DenseVector FeatureRow::to_dense(std::size_t dimension) const {
  DenseVector out(dimension, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) out.at(index[i]) = value[i];
  return out;
}

void Dataset::add(FeatureRow row, int label) {
  rows.push_back(std::move(row));
  labels.push_back(label);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.dimension = dimension;
  out.num_classes = num_classes;
  out.rows.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.rows.push_back(rows.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

void Dataset::validate() const {
  if (rows.size() != labels.size()) {
    throw Error(ErrorCode::dimension_mismatch,
                std::to_string(rows.size()) + " rows but " + std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 2) throw Error(ErrorCode::invalid_argument, "at least two classes are required");
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.index.size() != row.value.size()) throw Error(ErrorCode::dimension_mismatch, "ragged feature row");
    for (std::size_t i = 0; i < row.index.size(); ++i) {
      if (row.index[i] >= dimension) {
        throw Error(ErrorCode::dimension_mismatch, "feature index " + std::to_string(row.index[i]) +
                                                       " out of range for dimension " + std::to_string(dimension));
      }
      if (i > 0 && row.index[i] <= row.index[i - 1]) {
        throw Error(ErrorCode::invalid_argument, "feature indices must be strictly increasing");
      }
      if (!std::isfinite(row.value[i])) throw Error(ErrorCode::non_finite, "non-finite feature value");
    }
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= num_classes) {
      throw Error(ErrorCode::invalid_argument, "label out of range");
    }
  }
}

std::string to_string(Penalty penalty) {
  switch (penalty) {
    case Penalty::none: return "none";
    case Penalty::l1: return "l1";
    case Penalty::l2: return "l2";
  }
  return "l2";
}

Penalty parse_penalty(const std::string& name) {
  if (name == "none") return Penalty::none;
  if (name == "l1") return Penalty::l1;
  if (name == "l2") return Penalty::l2;
  throw Error(ErrorCode::invalid_argument, "unknown penalty '" + name + "'");
}

std::string to_string(ClassWeightMode mode) { return mode == ClassWeightMode::balanced ? "balanced" : "none"; }

ClassWeightMode parse_class_weight_mode(const std::string& name) {
  if (name == "none") return ClassWeightMode::none;
  if (name == "balanced") return ClassWeightMode::balanced;
  throw Error(ErrorCode::invalid_argument, "unknown class weight mode '" + name + "'");
}

std::vector<double> class_weights(std::span<const int> labels, std::size_t num_classes, ClassWeightMode mode) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int label : labels) ++counts.at(static_cast<std::size_t>(label));
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw Error(ErrorCode::class_absent, "class " + std::to_string(c) + " has no training rows");
  }
  std::vector<double> weights(num_classes, 1.0);
  if (mode == ClassWeightMode::balanced) {
    const double n = static_cast<double>(labels.size());
    const double k = static_cast<double>(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) weights[c] = n / (k * static_cast<double>(counts[c]));
  }
  return weights;
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

LinearModel LinearModel::zeros(std::size_t num_classes, std::size_t dimension) {
  LinearModel model;
  model.num_classes = num_classes;
  model.dimension = dimension;
  model.params.assign(num_classes * dimension + num_classes, 0.0);
  model.class_weights.assign(num_classes, 1.0);
  return model;
}

double LinearModel::weight_norm() const {
  double sum = 0.0;
  for (std::size_t i = 0; i < weight_count(); ++i) sum += params[i] * params[i];
  return std::sqrt(sum);
}

MLPModel MLPModel::initialize(std::size_t input, std::span<const std::size_t> hidden, std::size_t classes,
                              std::uint64_t seed) {
  MLPModel model;
  model.layer_sizes.push_back(input);
  for (std::size_t h : hidden) {
    if (h == 0) throw Error(ErrorCode::invalid_argument, "hidden layer of width 0");
    model.layer_sizes.push_back(h);
  }
  model.layer_sizes.push_back(classes);
  model.params.assign(model.weight_offset(model.num_layers()), 0.0);
  model.class_weights.assign(classes, 1.0);
  Rng rng(seed);
  for (std::size_t layer = 0; layer < model.num_layers(); ++layer) {
    const std::size_t fan_in = model.layer_sizes[layer];
    const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    const std::size_t begin = model.weight_offset(layer);
    const std::size_t end = model.bias_offset(layer);
    for (std::size_t i = begin; i < end; ++i) model.params[i] = rng.uniform(-limit, limit);
  }
  return model;
}

std::size_t MLPModel::weight_offset(std::size_t layer) const {
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layer; ++l) offset += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  return offset;
}

std::size_t num_classes(const Classifier& model) {
  return std::visit(
      [](const auto& m) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, LinearModel>) {
          return m.num_classes;
        } else {
          return m.num_classes();
        }
      },
      model);
}

std::size_t dimension(const Classifier& model) {
  return std::visit(
      [](const auto& m) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, LinearModel>) {
          return m.dimension;
        } else {
          return m.dimension();
        }
      },
      model);
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

namespace {

double log_sum_exp(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - peak);
  return peak + std::log(sum);
}

void check_row(const FeatureRow& x, std::size_t dimension) {
  for (std::size_t i = 0; i < x.index.size(); ++i) {
    if (x.index[i] >= dimension) {
      throw Error(ErrorCode::dimension_mismatch, "feature index " + std::to_string(x.index[i]) +
                                                     " exceeds model dimension " + std::to_string(dimension));
    }
    if (!std::isfinite(x.value[i])) throw Error(ErrorCode::non_finite, "non-finite input feature");
  }
}

void linear_logits(const LinearModel& model, const FeatureRow& x, std::span<double> out) {
  const std::size_t k_count = model.num_classes;
  const double* bias = model.params.data() + model.weight_count();
  std::copy(bias, bias + k_count, out.begin());
  for (std::size_t i = 0; i < x.index.size(); ++i) {
    const double v = x.value[i];
    const double* w = model.params.data() + static_cast<std::size_t>(x.index[i]) * k_count;
    for (std::size_t k = 0; k < k_count; ++k) out[k] += v * w[k];
  }
}

// acts[l] holds the rectified output of hidden layer l; the last entry holds logits.
void mlp_forward(const MLPModel& model, const FeatureRow& x, std::vector<DenseVector>& acts) {
  const std::size_t layers = model.num_layers();
  acts.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = model.layer_sizes[l];
    const std::size_t out = model.layer_sizes[l + 1];
    const double* w = model.params.data() + model.weight_offset(l);
    const double* b = model.params.data() + model.bias_offset(l);
    auto& z = acts[l];
    z.assign(b, b + out);
    if (l == 0) {
      for (std::size_t i = 0; i < x.index.size(); ++i) {
        const double v = x.value[i];
        const double* row = w + static_cast<std::size_t>(x.index[i]) * out;
        for (std::size_t o = 0; o < out; ++o) z[o] += v * row[o];
      }
    } else {
      const auto& prev = acts[l - 1];
      for (std::size_t i = 0; i < in; ++i) {
        const double v = prev[i];
        if (v == 0.0) continue;
        const double* row = w + i * out;
        for (std::size_t o = 0; o < out; ++o) z[o] += v * row[o];
      }
    }
    if (l + 1 < layers) {
      for (double& value : z) value = value > 0.0 ? value : 0.0;
    }
  }
}

// Accumulates d(loss)/d(params) into grad given d(loss)/d(logits) in `delta`.
void mlp_backward(const MLPModel& model, const FeatureRow& x, const std::vector<DenseVector>& acts, DenseVector delta,
                  std::span<double> grad) {
  DenseVector next;
  for (std::size_t l = model.num_layers(); l-- > 0;) {
    const std::size_t in = model.layer_sizes[l];
    const std::size_t out = model.layer_sizes[l + 1];
    const double* w = model.params.data() + model.weight_offset(l);
    double* gw = grad.data() + model.weight_offset(l);
    double* gb = grad.data() + model.bias_offset(l);
    for (std::size_t o = 0; o < out; ++o) gb[o] += delta[o];
    if (l == 0) {
      for (std::size_t i = 0; i < x.index.size(); ++i) {
        const double v = x.value[i];
        double* row = gw + static_cast<std::size_t>(x.index[i]) * out;
        for (std::size_t o = 0; o < out; ++o) row[o] += v * delta[o];
      }
      break;
    }
    const auto& prev = acts[l - 1];
    next.assign(in, 0.0);
    for (std::size_t i = 0; i < in; ++i) {
      const double v = prev[i];
      if (v <= 0.0) continue;
      double* grow = gw + i * out;
      const double* wrow = w + i * out;
      double back = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        grow[o] += v * delta[o];
        back += wrow[o] * delta[o];
      }
      next[i] = back;
    }
    delta.swap(next);
  }
}

}  // namespace

DenseVector softmax(std::span<const double> logits) {
  DenseVector out(logits.size());
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

DenseVector predict_proba(const LinearModel& model, const FeatureRow& x) {
  check_row(x, model.dimension);
  DenseVector logits(model.num_classes);
  linear_logits(model, x, logits);
  return softmax(logits);
}

DenseVector predict_proba(const MLPModel& model, const FeatureRow& x) {
  check_row(x, model.dimension());
  std::vector<DenseVector> acts;
  mlp_forward(model, x, acts);
  return softmax(acts.back());
}

DenseVector predict_proba(const Classifier& model, const FeatureRow& x) {
  return std::visit([&](const auto& m) { return predict_proba(m, x); }, model);
}

DenseVector predict_proba(const Classifier& model, std::span<const double> x) {
  if (x.size() != dimension(model)) {
    throw Error(ErrorCode::dimension_mismatch, "input has " + std::to_string(x.size()) + " features, model expects " +
                                                   std::to_string(dimension(model)));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "non-finite input feature");
  }
  return predict_proba(model, FeatureRow::from_dense(x));
}

double top1_accuracy(const Classifier& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto probs = predict_proba(model, data.rows[i]);
    const auto best = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    if (best == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

double objective(const LinearModel& model, const Dataset& data, std::span<const std::size_t> rows, double reg_scale,
                 std::span<double> grad) {
  const std::size_t k_count = model.num_classes;
  const bool want_grad = !grad.empty();
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(rows.size(), 1));
  DenseVector logits(k_count);
  double loss = 0.0;
  for (std::size_t r : rows) {
    const auto& x = data.rows[r];
    const auto y = static_cast<std::size_t>(data.labels[r]);
    const double w = model.class_weights[y];
    linear_logits(model, x, logits);
    const double lse = log_sum_exp(logits);
    loss += w * (lse - logits[y]);
    if (!want_grad) continue;
    for (std::size_t k = 0; k < k_count; ++k) logits[k] = std::exp(logits[k] - lse) * w * inv_n;
    logits[y] -= w * inv_n;
    for (std::size_t i = 0; i < x.index.size(); ++i) {
      double* g = grad.data() + static_cast<std::size_t>(x.index[i]) * k_count;
      const double v = x.value[i];
      for (std::size_t k = 0; k < k_count; ++k) g[k] += v * logits[k];
    }
    double* gb = grad.data() + model.weight_count();
    for (std::size_t k = 0; k < k_count; ++k) gb[k] += logits[k];
  }
  loss *= inv_n;
  if (reg_scale != 0.0) {
    double squares = 0.0;
    for (std::size_t i = 0; i < model.weight_count(); ++i) {
      squares += model.params[i] * model.params[i];
      if (want_grad) grad[i] += reg_scale * model.params[i];
    }
    loss += 0.5 * reg_scale * squares;
  }
  return loss;
}

double objective(const MLPModel& model, const Dataset& data, std::span<const std::size_t> rows, double reg_scale,
                 std::span<double> grad) {
  const bool want_grad = !grad.empty();
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(rows.size(), 1));
  std::vector<DenseVector> acts;
  double loss = 0.0;
  for (std::size_t r : rows) {
    const auto& x = data.rows[r];
    const auto y = static_cast<std::size_t>(data.labels[r]);
    const double w = model.class_weights[y];
    mlp_forward(model, x, acts);
    const auto& logits = acts.back();
    const double lse = log_sum_exp(logits);
    loss += w * (lse - logits[y]);
    if (!want_grad) continue;
    DenseVector delta(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) delta[k] = std::exp(logits[k] - lse) * w * inv_n;
    delta[y] -= w * inv_n;
    mlp_backward(model, x, acts, std::move(delta), grad);
  }
  loss *= inv_n;
  if (reg_scale != 0.0) {
    double squares = 0.0;
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      for (std::size_t i = model.weight_offset(l); i < model.bias_offset(l); ++i) {
        squares += model.params[i] * model.params[i];
        if (want_grad) grad[i] += reg_scale * model.params[i];
      }
    }
    loss += 0.5 * reg_scale * squares;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Logistic regression training
// ---------------------------------------------------------------------------

namespace {

void check_training_data(const Dataset& data) {
  data.validate();
  if (data.size() < data.num_classes) {
    throw Error(ErrorCode::invalid_argument, "need at least as many rows as classes");
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

void lbfgs(LinearModel& model, const Dataset& data, std::span<const std::size_t> rows, double reg_scale,
           const TrainConfig& config, TrainLog* log) {
  constexpr std::size_t kMemory = 10;
  constexpr double kArmijo = 1e-4;
  const std::size_t n = model.params.size();
  DenseVector grad(n), trial_grad(n), direction(n), alpha(kMemory);
  std::deque<std::pair<DenseVector, DenseVector>> history;  // (s, y)
  double loss = objective(model, data, rows, reg_scale, grad);
  LinearModel trial = model;
  for (std::size_t iter = 0; iter < config.max_iterations; ++iter) {
    if (max_abs(grad) < config.tolerance) break;
    // Two-loop recursion.
    direction = grad;
    for (std::size_t j = history.size(); j-- > 0;) {
      const auto& [s, y] = history[j];
      alpha[j] = dot(s, direction) / dot(y, s);
      for (std::size_t i = 0; i < n; ++i) direction[i] -= alpha[j] * y[i];
    }
    if (!history.empty()) {
      const auto& [s, y] = history.back();
      const double gamma = dot(s, y) / dot(y, y);
      for (double& d : direction) d *= gamma;
    } else {
      const double norm = std::sqrt(dot(grad, grad));
      for (double& d : direction) d /= norm;
    }
    for (std::size_t j = 0; j < history.size(); ++j) {
      const auto& [s, y] = history[j];
      const double beta = dot(y, direction) / dot(y, s);
      for (std::size_t i = 0; i < n; ++i) direction[i] += s[i] * (alpha[j] - beta);
    }
    for (double& d : direction) d = -d;
    double slope = dot(grad, direction);
    if (!(slope < 0.0)) {
      history.clear();
      for (std::size_t i = 0; i < n; ++i) direction[i] = -grad[i];
      slope = dot(grad, direction);
    }

    double step = 1.0;
    double trial_loss = 0.0;
    bool accepted = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      for (std::size_t i = 0; i < n; ++i) trial.params[i] = model.params[i] + step * direction[i];
      trial_loss = objective(trial, data, rows, reg_scale, trial_grad);
      if (std::isfinite(trial_loss) && trial_loss <= loss + kArmijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    DenseVector s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial.params[i] - model.params[i];
      y[i] = trial_grad[i] - grad[i];
    }
    if (dot(s, y) > 1e-12) {
      history.emplace_back(std::move(s), std::move(y));
      if (history.size() > kMemory) history.pop_front();
    }
    const double previous = loss;
    model.params.swap(trial.params);
    trial.params = model.params;
    grad.swap(trial_grad);
    loss = trial_loss;
    if (log != nullptr) log->loss.push_back(loss);
    if (previous - loss <= 1e-15 * std::max(1.0, std::abs(previous))) break;
  }
}

// Proximal gradient (ISTA) with backtracking on the smooth part; the l1 term
// covers weights only.
void proximal_gradient(LinearModel& model, const Dataset& data, std::span<const std::size_t> rows, double l1,
                       const TrainConfig& config, TrainLog* log) {
  const std::size_t n = model.params.size();
  const std::size_t weights = model.weight_count();
  DenseVector grad(n);
  double smooth = objective(model, data, rows, 0.0, grad);
  const auto l1_norm = [&](const DenseVector& p) {
    double sum = 0.0;
    for (std::size_t i = 0; i < weights; ++i) sum += std::abs(p[i]);
    return sum;
  };
  double step = 1.0;
  LinearModel trial = model;
  for (std::size_t iter = 0; iter < config.max_iterations; ++iter) {
    double trial_smooth = 0.0;
    bool accepted = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      for (std::size_t i = 0; i < n; ++i) {
        const double moved = model.params[i] - step * grad[i];
        if (i < weights) {
          const double shrink = step * l1;
          trial.params[i] = moved > shrink ? moved - shrink : (moved < -shrink ? moved + shrink : 0.0);
        } else {
          trial.params[i] = moved;
        }
      }
      trial_smooth = objective(trial, data, rows, 0.0, {});
      double linear = 0.0;
      double squares = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = trial.params[i] - model.params[i];
        linear += grad[i] * d;
        squares += d * d;
      }
      if (std::isfinite(trial_smooth) && trial_smooth <= smooth + linear + squares / (2.0 * step) + 1e-15) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(trial.params[i] - model.params[i]));
    model.params = trial.params;
    smooth = objective(model, data, rows, 0.0, grad);
    if (log != nullptr) log->loss.push_back(smooth + l1 * l1_norm(model.params));
    if (change / step < config.tolerance) break;
    step *= 1.5;
  }
}

}  // namespace

LinearModel train_logistic(const Dataset& data, const TrainConfig& config, Penalty penalty, double C, TrainLog* log) {
  check_training_data(data);
  if (!(C > 0.0) || !std::isfinite(C)) throw Error(ErrorCode::invalid_argument, "C must be positive and finite");
  LinearModel model = LinearModel::zeros(data.num_classes, data.dimension);
  model.penalty = penalty;
  model.C = C;
  model.class_weights = class_weights(data.labels, data.num_classes, config.class_weight);

  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const double scale = 1.0 / (C * static_cast<double>(data.size()));
  if (log != nullptr) {
    log->loss.clear();
    log->loss.push_back(objective(model, data, rows, penalty == Penalty::l2 ? scale : 0.0, {}));
  }
  switch (penalty) {
    case Penalty::none: lbfgs(model, data, rows, 0.0, config, log); break;
    case Penalty::l2: lbfgs(model, data, rows, scale, config, log); break;
    case Penalty::l1: proximal_gradient(model, data, rows, scale, config, log); break;
  }
  for (double p : model.params) {
    if (!std::isfinite(p)) throw Error(ErrorCode::divergence, "logistic regression produced non-finite parameters");
  }
  return model;
}

// ---------------------------------------------------------------------------
// MLP training
// ---------------------------------------------------------------------------

MLPModel train_mlp(const Dataset& data, const TrainConfig& config, std::span<const std::size_t> hidden_sizes,
                   TrainLog* log) {
  check_training_data(data);
  if (config.batch_size == 0 || config.max_epochs == 0 || !(config.learning_rate > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "batch size, epochs and learning rate must be positive");
  }
  // every class must appear somewhere before any split
  class_weights(data.labels, data.num_classes, ClassWeightMode::none);

  std::vector<std::size_t> train_rows(data.size());
  std::iota(train_rows.begin(), train_rows.end(), std::size_t{0});
  Dataset held_out;
  const Dataset* validation = nullptr;
  if (config.validation.has_value()) {
    validation = &*config.validation;
    if (validation->dimension != data.dimension || validation->num_classes != data.num_classes) {
      throw Error(ErrorCode::dimension_mismatch, "validation set does not match training shape");
    }
  } else if (config.validation_fraction > 0.0) {
    Rng split_rng(config.seed ^ 0x5bd1e995ULL);
    split_rng.shuffle(train_rows);
    const auto count = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(data.size())));
    if (count > 0 && count < data.size()) {
      std::vector<std::size_t> val_rows(train_rows.begin(), train_rows.begin() + static_cast<std::ptrdiff_t>(count));
      train_rows.erase(train_rows.begin(), train_rows.begin() + static_cast<std::ptrdiff_t>(count));
      std::sort(val_rows.begin(), val_rows.end());
      std::sort(train_rows.begin(), train_rows.end());
      held_out = data.subset(val_rows);
      validation = &held_out;
    } else {
      std::sort(train_rows.begin(), train_rows.end());
    }
  }

  MLPModel model = MLPModel::initialize(data.dimension, hidden_sizes, data.num_classes, config.seed);
  model.l2 = config.l2;
  {
    std::vector<int> train_labels;
    train_labels.reserve(train_rows.size());
    std::vector<std::size_t> counts(data.num_classes, 0);
    for (std::size_t r : train_rows) ++counts[static_cast<std::size_t>(data.labels[r])];
    for (std::size_t c = 0; c < data.num_classes; ++c) {
      model.class_weights[c] = (config.class_weight == ClassWeightMode::balanced && counts[c] > 0)
                                   ? static_cast<double>(train_rows.size()) /
                                         (static_cast<double>(data.num_classes) * static_cast<double>(counts[c]))
                                   : 1.0;
    }
  }

  const std::size_t n_params = model.params.size();
  const double reg_scale = config.l2 / static_cast<double>(train_rows.size());
  DenseVector grad(n_params), m1(n_params, 0.0), m2(n_params, 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::size_t step = 0;
  Rng rng(config.seed + 1);

  std::vector<double> best_params = model.params;
  double best_accuracy = -1.0;
  std::size_t stale = 0;
  if (log != nullptr) *log = TrainLog{};

  std::vector<std::size_t> order = train_rows;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const double loss = objective(model, data, batch, reg_scale, grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::divergence, "non-finite loss at epoch " + std::to_string(epoch) +
                                               "; lower the learning rate (currently " +
                                               std::to_string(config.learning_rate) + ")");
      }
      epoch_loss += loss * static_cast<double>(batch.size());
      ++step;
      const double correction1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double correction2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t i = 0; i < n_params; ++i) {
        const double g = grad[i];
        if (g == 0.0 && m1[i] == 0.0 && m2[i] == 0.0) continue;
        m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * g;
        m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * g * g;
        model.params[i] -= config.learning_rate * (m1[i] / correction1) / (std::sqrt(m2[i] / correction2) + kEps);
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    if (log != nullptr) log->loss.push_back(epoch_loss);

    if (validation != nullptr) {
      const double accuracy = top1_accuracy(model, *validation);
      if (log != nullptr) log->validation_accuracy.push_back(accuracy);
      if (accuracy > best_accuracy) {
        best_accuracy = accuracy;
        best_params = model.params;
        stale = 0;
        if (log != nullptr) log->best_epoch = epoch;
      } else if (++stale >= config.patience) {
        break;
      }
    }
  }
  if (validation != nullptr) model.params = std::move(best_params);
  return model;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

double gradient_check(const Classifier& classifier, const Dataset& batch, double epsilon, std::uint64_t seed,
                      std::size_t samples) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw Error(ErrorCode::invalid_argument, "epsilon must be in (0, 1e-2]");
  std::vector<std::size_t> rows(batch.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const double n = static_cast<double>(std::max<std::size_t>(batch.size(), 1));

  return std::visit(
      [&](auto model) -> double {
        double reg_scale = 0.0;
        if constexpr (std::is_same_v<decltype(model), LinearModel>) {
          if (model.penalty == Penalty::l2) reg_scale = 1.0 / (model.C * n);
        } else {
          reg_scale = model.l2 / n;
        }
        const std::size_t count = model.params.size();
        DenseVector analytic(count);
        objective(model, batch, rows, reg_scale, analytic);

        std::vector<std::size_t> chosen;
        if (count <= samples) {
          chosen.resize(count);
          std::iota(chosen.begin(), chosen.end(), std::size_t{0});
        } else {
          Rng rng(seed);
          std::set<std::size_t> picked;
          while (picked.size() < samples) picked.insert(rng.below(count));
          chosen.assign(picked.begin(), picked.end());
        }
        double worst = 0.0;
        for (std::size_t index : chosen) {
          const double original = model.params[index];
          model.params[index] = original + epsilon;
          const double plus = objective(model, batch, rows, reg_scale, {});
          model.params[index] = original - epsilon;
          const double minus = objective(model, batch, rows, reg_scale, {});
          model.params[index] = original;
          const double numeric = (plus - minus) / (2.0 * epsilon);
          const double denom = std::max(std::abs(analytic[index]) + std::abs(numeric), 1e-5);
          worst = std::max(worst, std::abs(analytic[index] - numeric) / denom);
        }
        return worst;
      },
      classifier);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------
//
// Layout (little-endian):
//   "TRGM" | u32 version | u32 kind (1 linear, 2 mlp) | body | u32 crc32
// linear body: u64 K | u64 D | u32 penalty | f64 C | f64[K] class weights | u64 n | f64[n] params
// mlp body:    u64 L | u64[L] layer sizes | f64 l2 | f64[K] class weights | u64 n | f64[n] params
// The CRC covers every byte before it.

namespace {

constexpr char kMagic[4] = {'T', 'R', 'G', 'M'};

class Writer {
 public:
  void bytes(const char* data, std::size_t size) { out_.append(data, size); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> values) {
    u64(values.size());
    for (double v : values) f64(v);
  }
  std::string finish() {
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(out_.data()), static_cast<uInt>(out_.size()));
    u32(static_cast<std::uint32_t>(crc));
    return std::move(out_);
  }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s(std::size_t expected) {
    const auto count = u64();
    if (count != expected) throw Error(ErrorCode::corrupt_file, "parameter count does not match the model shape");
    need(count * 8);
    std::vector<double> values(count);
    for (auto& v : values) v = f64();
    return values;
  }
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw Error(ErrorCode::corrupt_file, "model file truncated");
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const Classifier& model) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kModelFormatVersion);
  if (const auto* linear = std::get_if<LinearModel>(&model)) {
    w.u32(1);
    w.u64(linear->num_classes);
    w.u64(linear->dimension);
    w.u32(static_cast<std::uint32_t>(linear->penalty));
    w.f64(linear->C);
    w.f64s(linear->class_weights);
    w.f64s(linear->params);
  } else {
    const auto& mlp = std::get<MLPModel>(model);
    w.u32(2);
    w.u64(mlp.layer_sizes.size());
    for (auto size : mlp.layer_sizes) w.u64(size);
    w.f64(mlp.l2);
    w.f64s(mlp.class_weights);
    w.f64s(mlp.params);
  }
  return w.finish();
}

Classifier deserialize_model(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
    throw Error(ErrorCode::corrupt_file, "not a model file");
  }
  Reader header(bytes.substr(4, 4));
  const auto version = header.u32();
  if (version != kModelFormatVersion) {
    throw Error(ErrorCode::version_mismatch, "model format version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kModelFormatVersion));
  }
  if (bytes.size() < 16) throw Error(ErrorCode::corrupt_file, "model file truncated");
  const auto body = bytes.substr(0, bytes.size() - 4);
  Reader trailer(bytes.substr(bytes.size() - 4));
  const auto stored = trailer.u32();
  const auto actual = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  if (stored != static_cast<std::uint32_t>(actual)) throw Error(ErrorCode::corrupt_file, "model checksum mismatch");

  Reader r(body.substr(8));
  const auto kind = r.u32();
  Classifier result;
  if (kind == 1) {
    LinearModel model;
    model.num_classes = r.u64();
    model.dimension = r.u64();
    const auto penalty = r.u32();
    if (penalty > 2) throw Error(ErrorCode::corrupt_file, "bad penalty tag");
    model.penalty = static_cast<Penalty>(penalty);
    model.C = r.f64();
    model.class_weights = r.f64s(model.num_classes);
    model.params = r.f64s(model.num_classes * model.dimension + model.num_classes);
    result = std::move(model);
  } else if (kind == 2) {
    MLPModel model;
    const auto layers = r.u64();
    if (layers < 2 || layers > 64) throw Error(ErrorCode::corrupt_file, "bad layer count");
    for (std::uint64_t i = 0; i < layers; ++i) model.layer_sizes.push_back(r.u64());
    model.l2 = r.f64();
    model.class_weights = r.f64s(model.num_classes());
    model.params = r.f64s(model.weight_offset(model.num_layers()));
    result = std::move(model);
  } else {
    throw Error(ErrorCode::corrupt_file, "unknown model kind " + std::to_string(kind));
  }
  if (!r.done()) throw Error(ErrorCode::corrupt_file, "trailing bytes in model file");
  return result;
}

void save_model(const Classifier& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  const auto bytes = serialize_model(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io_error, "failed writing " + path.string());
}

Classifier load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return deserialize_model(buffer.str());
}

}  // namespace triage::ml
