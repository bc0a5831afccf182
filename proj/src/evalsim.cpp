#include "triage/evalsim.hpp"

#include <cstdio>
#include <iomanip>
#include <set>
#include <sstream>

#include "triage/rng.hpp"

namespace triage::eval {

using nlohmann::json;

void SplitSpec::validate() const {
  if (!(train > 0.0 && val > 0.0 && test > 0.0)) throw Error(ErrorCode::invalid_argument, "split fractions must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw Error(ErrorCode::invalid_argument, "split fractions must sum to 1");
}

SplitCounts split_counts(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  const double total = static_cast<double>(n);
  const double quotas[3] = {spec.train * total, spec.val * total, spec.test * total};
  std::size_t counts[3];
  double remainders[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    // tolerate 0.1 * 10 landing a hair under 1
    counts[i] = static_cast<std::size_t>(std::floor(quotas[i] + 1e-9));
    remainders[i] = quotas[i] - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  int order[3] = {0, 1, 2};
  std::stable_sort(order, order + 3, [&](int a, int b) { return remainders[a] > remainders[b]; });
  for (int i = 0; assigned < n; i = (i + 1) % 3) {
    ++counts[order[i]];
    ++assigned;
  }
  while (assigned > n) {
    for (int i = 2; i >= 0 && assigned > n; --i) {
      if (counts[i] > 0) {
        --counts[i];
        --assigned;
      }
    }
  }
  return {counts[0], counts[1], counts[2]};
}

double topk_accuracy(const std::vector<std::vector<std::string>>& ranked, std::span<const std::string> truths,
                     std::size_t k) {
  if (ranked.size() != truths.size()) throw Error(ErrorCode::dimension_mismatch, "predictions and truths differ in length");
  if (ranked.empty()) throw Error(ErrorCode::empty_input, "no predictions to score");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto end = ranked[i].begin() + static_cast<std::ptrdiff_t>(std::min(k, ranked[i].size()));
    if (std::find(ranked[i].begin(), end, truths[i]) != end) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranked.size());
}

double department_accuracy(const std::vector<std::vector<double>>& probabilities, std::span<const std::string> reasons,
                           const routing::DepartmentMap& map, std::span<const std::string> truth_departments,
                           std::size_t k) {
  std::vector<std::vector<std::string>> ranked;
  ranked.reserve(probabilities.size());
  for (const auto& probs : probabilities) {
    std::vector<std::string> order;
    for (const auto& [dept, score] : routing::rank_departments(routing::department_scores(probs, reasons, map))) {
      order.push_back(dept);
    }
    ranked.push_back(std::move(order));
  }
  return topk_accuracy(ranked, truth_departments, k);
}

TransferResult transfer_rate(std::span<const routing::RoutingDecision> decisions,
                             std::span<const std::string> truth_departments) {
  if (decisions.size() != truth_departments.size()) {
    throw Error(ErrorCode::dimension_mismatch, "decisions and truths differ in length");
  }
  TransferResult result;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (!decisions[i].auto_routed) continue;
    ++result.auto_routed;
    if (decisions[i].department != truth_departments[i]) ++result.transferred;
  }
  if (!decisions.empty()) {
    result.coverage = static_cast<double>(result.auto_routed) / static_cast<double>(decisions.size());
  }
  if (result.auto_routed > 0) {
    result.rate = static_cast<double>(result.transferred) / static_cast<double>(result.auto_routed);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

Hyperparameter Hyperparameter::log_range(std::string name, double low, double high, std::size_t grid_points) {
  Hyperparameter p;
  p.name = std::move(name);
  p.kind = Kind::log_uniform;
  p.low = low;
  p.high = high;
  p.grid_points = grid_points;
  return p;
}

Hyperparameter Hyperparameter::range(std::string name, double low, double high, std::size_t grid_points) {
  Hyperparameter p = log_range(std::move(name), low, high, grid_points);
  p.kind = Kind::uniform;
  return p;
}

Hyperparameter Hyperparameter::one_of(std::string name, std::vector<json> choices) {
  Hyperparameter p;
  p.name = std::move(name);
  p.kind = Kind::choice;
  p.choices = std::move(choices);
  return p;
}

std::vector<json> Hyperparameter::grid_values() const {
  if (kind == Kind::choice) return choices;
  std::vector<json> values;
  for (std::size_t i = 0; i < grid_points; ++i) {
    const double t = grid_points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(grid_points - 1);
    values.push_back(kind == Kind::log_uniform ? std::exp(std::log(low) + t * (std::log(high) - std::log(low)))
                                               : low + t * (high - low));
  }
  return values;
}

void SearchSpace::validate() const {
  if (budget < 1) throw Error(ErrorCode::invalid_argument, "search budget must be at least 1");
  if (params.empty()) throw Error(ErrorCode::invalid_argument, "search space has no hyperparameters");
  std::set<std::string> names;
  for (const auto& p : params) {
    if (!names.insert(p.name).second) throw Error(ErrorCode::invalid_argument, "duplicate hyperparameter " + p.name);
    switch (p.kind) {
      case Hyperparameter::Kind::choice:
        if (p.choices.empty()) throw Error(ErrorCode::invalid_argument, p.name + " has no choices");
        break;
      case Hyperparameter::Kind::log_uniform:
        if (!(p.low > 0.0)) throw Error(ErrorCode::invalid_argument, p.name + " log range must be positive");
        [[fallthrough]];
      case Hyperparameter::Kind::uniform:
        if (!(p.low <= p.high) || p.grid_points == 0) throw Error(ErrorCode::invalid_argument, p.name + " has an empty range");
        break;
    }
  }
}

std::size_t SearchSpace::grid_size() const {
  std::size_t size = 1;
  for (const auto& p : params) size *= p.grid_values().size();
  return size;
}

SearchResult search(const SearchSpace& space, const Objective& objective, SearchStrategy strategy, std::uint64_t seed) {
  space.validate();
  std::vector<json> configs;
  if (strategy == SearchStrategy::grid) {
    std::vector<std::vector<json>> axes;
    for (const auto& p : space.params) axes.push_back(p.grid_values());
    const std::size_t total = std::min(space.budget, space.grid_size());
    for (std::size_t flat = 0; flat < total; ++flat) {
      json config = json::object();
      std::size_t rest = flat;
      for (std::size_t a = axes.size(); a-- > 0;) {
        config[space.params[a].name] = axes[a][rest % axes[a].size()];
        rest /= axes[a].size();
      }
      configs.push_back(std::move(config));
    }
  } else {
    Rng rng(seed);
    for (std::size_t i = 0; i < space.budget; ++i) {
      json config = json::object();
      for (const auto& p : space.params) {
        switch (p.kind) {
          case Hyperparameter::Kind::choice: config[p.name] = p.choices[rng.below(p.choices.size())]; break;
          case Hyperparameter::Kind::uniform: config[p.name] = rng.uniform(p.low, p.high); break;
          case Hyperparameter::Kind::log_uniform:
            config[p.name] = std::exp(rng.uniform(std::log(p.low), std::log(p.high)));
            break;
        }
      }
      configs.push_back(std::move(config));
    }
  }

  SearchResult result;
  bool found = false;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    TrialRecord record{i, configs[i], std::nullopt, {}};
    try {
      const double score = objective(configs[i]);
      if (!std::isfinite(score)) throw Error(ErrorCode::non_finite, "objective returned a non-finite score");
      record.score = score;
      if (!found || score > result.best_score) {
        found = true;
        result.best_score = score;
        result.best_config = configs[i];
      }
    } catch (const std::exception& e) {
      record.error = e.what();
    }
    result.trace.push_back(std::move(record));
  }
  if (!found) throw Error(ErrorCode::invalid_argument, "every search configuration failed");
  return result;
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

json MetricReport::to_json() const {
  json doc = {{"model", model},
              {"reason_top1", reason_top1},
              {"reason_top3", reason_top3},
              {"department_top1", department_top1},
              {"department_top3", department_top3},
              {"coverage", coverage},
              {"support", support},
              {"fingerprint", fingerprint}};
  doc["transfer_rate"] = transfer_rate ? json(*transfer_rate) : json(nullptr);
  return doc;
}

std::string fingerprint(const json& config) {
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(stable_hash(config.dump())));
  return buffer;
}

std::string format_percent(double rate, int decimals) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(decimals) << rate * 100.0 << '%';
  return out.str();
}

namespace {

class Table {
 public:
  explicit Table(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string render() const {
    std::vector<std::size_t> widths(rows_.front().size(), 0);
    for (const auto& row : rows_) {
      for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
    }
    std::string out;
    const auto rule = [&] {
      out += '+';
      for (auto w : widths) out += std::string(w + 2, '-') + '+';
      out += '\n';
    };
    rule();
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      out += '|';
      for (std::size_t c = 0; c < widths.size(); ++c) {
        const auto& cell = c < rows_[r].size() ? rows_[r][c] : std::string{};
        out += ' ' + cell + std::string(widths[c] - cell.size(), ' ') + " |";
      }
      out += '\n';
      if (r == 0) rule();
    }
    rule();
    return out;
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

std::string rate_cell(const json& value, int decimals) {
  return value.is_number() ? format_percent(value.get<double>(), decimals) : "-";
}

}  // namespace

std::string render_report(std::span<const MetricReport> metrics, const json& baselines) {
  std::string out;
  out += "Contact reason and department accuracy\n";
  Table accuracy({"Model", "Top-1 accuracy", "Top-3 accuracy", "Top-1 dept. accuracy", "Top-3 dept. accuracy"});
  for (const auto& m : metrics) {
    accuracy.add({m.model, format_percent(m.reason_top1, 1), format_percent(m.reason_top3, 1),
                  format_percent(m.department_top1, 1), format_percent(m.department_top3, 1)});
  }
  out += accuracy.render();

  out += "\nTop-1 contact reason accuracy\n";
  Table top1({"Model", "Top-1 accuracy"});
  for (const auto& m : metrics) top1.add({m.model, format_percent(m.reason_top1, 2)});
  out += top1.render();

  out += "\nRouting\n";
  Table transfer({"Model", "Transf. rate", "Coverage"});
  for (const auto& m : metrics) {
    transfer.add({m.model, m.transfer_rate ? format_percent(*m.transfer_rate, 1) : "undefined",
                  format_percent(m.coverage, 1)});
  }
  out += transfer.render();

  if (baselines.is_object() && !baselines.empty()) {
    out += "\nReference values (production data, not reproducible here)\n";
    if (baselines.contains("classifiers")) {
      Table t({"Model", "Top-1 accuracy", "Top-3 accuracy", "Top-1 dept. accuracy", "Top-3 dept. accuracy"});
      for (const auto& row : baselines.at("classifiers")) {
        t.add({row.at("model").get<std::string>(), rate_cell(row.at("top1"), 1), rate_cell(row.at("top3"), 1),
               rate_cell(row.at("dept_top1"), 1), rate_cell(row.at("dept_top3"), 1)});
      }
      out += t.render();
    }
    if (baselines.contains("text_representations")) {
      Table t({"Model", "Top-1 accuracy"});
      for (const auto& row : baselines.at("text_representations")) {
        t.add({row.at("model").get<std::string>(), rate_cell(row.at("top1"), 2)});
      }
      out += t.render();
    }
    if (baselines.contains("production")) {
      Table t({"Model", "Transf. rate", "Avg. msg. per ticket"});
      for (const auto& row : baselines.at("production")) {
        std::ostringstream msgs;
        msgs << std::fixed << std::setprecision(1) << row.at("avg_messages").get<double>();
        t.add({row.at("model").get<std::string>(), rate_cell(row.at("transfer_rate"), 1), msgs.str()});
      }
      out += t.render();
    }
  }
  return out;
}

std::vector<ReferenceCheck> verify_reference(const json& reference) {
  std::vector<ReferenceCheck> checks;
  const auto add = [&](std::string name, bool passed, std::string detail) {
    checks.push_back({std::move(name), passed, std::move(detail)});
  };
  const auto& ds = reference.at("dataset");
  const auto total = ds.at("tickets").get<std::size_t>();
  const auto train = ds.at("train").get<std::size_t>();
  const auto val = ds.at("validation").get<std::size_t>();
  const auto test = ds.at("test").get<std::size_t>();
  add("split sums to total", train + val + test == total,
      std::to_string(train) + "+" + std::to_string(val) + "+" + std::to_string(test) + " vs " + std::to_string(total));
  const auto counts = split_counts(total, SplitSpec{});
  add("0.8/0.1/0.1 apportionment reproduces split",
      counts.train == train && counts.val == val && counts.test == test,
      std::to_string(counts.train) + "/" + std::to_string(counts.val) + "/" + std::to_string(counts.test));
  const auto classes = ds.at("classes_before_filter").get<std::size_t>();
  const auto kept = ds.at("classes_after_filter").get<std::size_t>();
  add("class filter only removes classes", kept <= classes && kept > 0,
      std::to_string(classes) + " -> " + std::to_string(kept) + " (" + std::to_string(classes - kept) + " dropped)");
  const auto& ctx = reference.at("context_corpus");
  const auto positive = ctx.at("has_context").get<std::size_t>();
  const auto negative = ctx.at("not_enough_context").get<std::size_t>();
  add("context labels sum to annotated chats", positive + negative == ctx.at("annotated").get<std::size_t>(),
      std::to_string(positive) + "+" + std::to_string(negative));
  const auto& ft = ds.at("fine_tune_subset");
  const auto ft_total = ft.at("train").get<std::size_t>() + ft.at("validation").get<std::size_t>() +
                        ft.at("test").get<std::size_t>();
  add("fine-tune subset is smaller than the full dataset", ft_total < total, std::to_string(ft_total));
  return checks;
}

}  // namespace triage::eval
