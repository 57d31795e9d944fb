#include "alphaforge/pool.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "alphaforge/common.hpp"
#include "alphaforge/ops.hpp"

namespace alphaforge {

namespace {

using nlohmann::json;

constexpr double kInitialWeight = 0.01;

}  // namespace

// Per-day centered cross-moments over the stocks where every factor and the
// target are valid. With z = F w: rho_d = (w.c) / sqrt(w'Cw * syy).
struct AlphaPool::DayStats {
  int count = 0;
  double syy = 0.0;
  std::vector<double> c;   // k: <f_j~, y~>
  std::vector<double> cc;  // k*k: <f_j~, f_l~>
};

AlphaPool::AlphaPool(int capacity, PanelPtr panel,
                     std::shared_ptr<const TargetPanel> target,
                     DayRange train_range, double min_coverage)
    : capacity_(capacity),
      panel_(std::move(panel)),
      target_(std::move(target)),
      train_range_(train_range),
      min_coverage_(min_coverage) {
  if (capacity_ < 1) {
    throw ConfigError("pool capacity must be >= 1");
  }
  if (!panel_ || !target_) {
    throw ConfigError("pool requires a panel and a target");
  }
  if (train_range_.size() <= 0 || train_range_.begin < 0 ||
      train_range_.end > panel_->n_days()) {
    throw ConfigError("pool training range is empty or out of bounds");
  }
}

FactorMatrix AlphaPool::Combine(const FeaturePanel& panel) const {
  if (entries_.empty()) {
    throw RuntimeError("cannot combine an empty pool");
  }
  if (&panel == panel_.get()) {
    return CombineCached();
  }
  FactorMatrix out(panel.n_stocks(), panel.n_days(), 0.0);
  std::vector<FactorMatrix> factors;
  factors.reserve(entries_.size());
  for (const PoolEntry& entry : entries_) {
    factors.push_back(ZScoreDaily(Evaluate(entry.expr, panel)));
  }
  for (std::size_t cell = 0; cell < out.values().size(); ++cell) {
    double acc = 0.0;
    for (std::size_t j = 0; j < entries_.size(); ++j) {
      acc += entries_[j].weight * factors[j].values()[cell];
    }
    out.values()[cell] = Canon(acc);
  }
  return out;
}

FactorMatrix AlphaPool::CombineCached() const {
  if (entries_.empty()) {
    throw RuntimeError("cannot combine an empty pool");
  }
  FactorMatrix out(panel_->n_stocks(), panel_->n_days(), 0.0);
  for (std::size_t cell = 0; cell < out.values().size(); ++cell) {
    double acc = 0.0;
    for (const PoolEntry& entry : entries_) {
      acc += entry.weight * entry.factor->values()[cell];
    }
    out.values()[cell] = Canon(acc);
  }
  return out;
}

std::vector<AlphaPool::DayStats> AlphaPool::BuildStats(
    const std::vector<PoolEntry>& entries) const {
  const int k = static_cast<int>(entries.size());
  const int n = panel_->n_stocks();
  std::vector<DayStats> stats;
  stats.reserve(train_range_.size());
  std::vector<int> stocks;
  std::vector<double> means(k);
  std::vector<double> centered;
  for (int t = train_range_.begin; t < train_range_.end; ++t) {
    stocks.clear();
    for (int i = 0; i < n; ++i) {
      bool ok = !std::isnan(target_->returns.At(i, t));
      for (int j = 0; ok && j < k; ++j) {
        ok = !std::isnan(entries[j].factor->At(i, t));
      }
      if (ok) {
        stocks.push_back(i);
      }
    }
    const int m = static_cast<int>(stocks.size());
    if (m < 2) {
      continue;
    }
    DayStats day;
    day.count = m;
    double mean_y = 0.0;
    for (int s : stocks) {
      mean_y += target_->returns.At(s, t);
    }
    mean_y /= m;
    for (int s : stocks) {
      const double dy = target_->returns.At(s, t) - mean_y;
      day.syy += dy * dy;
    }
    if (day.syy <= 0.0) {
      continue;
    }
    for (int j = 0; j < k; ++j) {
      double mean_f = 0.0;
      for (int s : stocks) {
        mean_f += entries[j].factor->At(s, t);
      }
      means[j] = mean_f / m;
    }
    centered.assign(static_cast<std::size_t>(k) * m, 0.0);
    for (int j = 0; j < k; ++j) {
      for (int s = 0; s < m; ++s) {
        centered[static_cast<std::size_t>(j) * m + s] =
            entries[j].factor->At(stocks[s], t) - means[j];
      }
    }
    day.c.assign(k, 0.0);
    day.cc.assign(static_cast<std::size_t>(k) * k, 0.0);
    for (int j = 0; j < k; ++j) {
      const double* fj = centered.data() + static_cast<std::size_t>(j) * m;
      double acc = 0.0;
      for (int s = 0; s < m; ++s) {
        acc += fj[s] * (target_->returns.At(stocks[s], t) - mean_y);
      }
      day.c[j] = acc;
      for (int l = j; l < k; ++l) {
        const double* fl = centered.data() + static_cast<std::size_t>(l) * m;
        double dot = 0.0;
        for (int s = 0; s < m; ++s) {
          dot += fj[s] * fl[s];
        }
        day.cc[static_cast<std::size_t>(j) * k + l] = dot;
        day.cc[static_cast<std::size_t>(l) * k + j] = dot;
      }
    }
    stats.push_back(std::move(day));
  }
  return stats;
}

double AlphaPool::IcOfWeights(const std::vector<DayStats>& stats,
                              const std::vector<double>& weights) const {
  const int k = static_cast<int>(weights.size());
  double sum = 0.0;
  int used = 0;
  std::vector<double> cw(k);
  for (const DayStats& day : stats) {
    double a = 0.0;
    for (int j = 0; j < k; ++j) {
      double dot = 0.0;
      for (int l = 0; l < k; ++l) {
        dot += day.cc[static_cast<std::size_t>(j) * k + l] * weights[l];
      }
      cw[j] = dot;
      a += day.c[j] * weights[j];
    }
    double b = 0.0;
    for (int j = 0; j < k; ++j) {
      b += weights[j] * cw[j];
    }
    if (b <= 0.0) {
      continue;
    }
    sum += a / std::sqrt(b * day.syy);
    ++used;
  }
  if (used == 0) {
    throw RuntimeError("no overlapping valid data");
  }
  return sum / used;
}

double AlphaPool::OptimizeEntries(std::vector<PoolEntry>& entries,
                                  const WeightOptParams& params) const {
  const int k = static_cast<int>(entries.size());
  if (k == 0) {
    return 0.0;
  }
  if (params.lr <= 0.0) {
    throw ConfigError("weight-optimizer learning rate must be > 0");
  }
  const std::vector<DayStats> stats = BuildStats(entries);

  std::vector<double> w(k);
  for (int j = 0; j < k; ++j) {
    w[j] = entries[j].weight;
  }
  const auto normalize = [&w]() {
    double norm = 0.0;
    for (double v : w) {
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& v : w) {
        v /= norm;
      }
    }
  };
  normalize();

  double ic = IcOfWeights(stats, w);
  std::vector<double> best_w = w;
  double best_ic = ic;

  std::vector<double> grad(k);
  std::vector<double> cw(k);
  for (int iter = 0; iter < params.max_iters; ++iter) {
    // Analytic gradient of the mean daily Pearson, same day-skip rule as IC.
    std::fill(grad.begin(), grad.end(), 0.0);
    int used = 0;
    for (const DayStats& day : stats) {
      double a = 0.0;
      for (int j = 0; j < k; ++j) {
        double dot = 0.0;
        for (int l = 0; l < k; ++l) {
          dot += day.cc[static_cast<std::size_t>(j) * k + l] * w[l];
        }
        cw[j] = dot;
        a += day.c[j] * w[j];
      }
      double b = 0.0;
      for (int j = 0; j < k; ++j) {
        b += w[j] * cw[j];
      }
      if (b <= 0.0) {
        continue;
      }
      const double inv = 1.0 / std::sqrt(b * day.syy);
      for (int j = 0; j < k; ++j) {
        grad[j] += day.c[j] * inv - a * cw[j] * inv / b;
      }
      ++used;
    }
    if (used == 0) {
      break;
    }
    bool finite = true;
    for (int j = 0; j < k; ++j) {
      grad[j] /= used;
      finite = finite && std::isfinite(grad[j]);
    }
    if (!finite) {
      throw RuntimeError("non-finite gradient during weight optimization");
    }
    for (int j = 0; j < k; ++j) {
      w[j] += params.lr * grad[j];
    }
    normalize();
    const double next_ic = IcOfWeights(stats, w);
    if (next_ic > best_ic) {
      best_ic = next_ic;
      best_w = w;
    }
    if (std::fabs(next_ic - ic) < params.tol) {
      break;
    }
    ic = next_ic;
  }

  for (int j = 0; j < k; ++j) {
    entries[j].weight = best_w[j];
  }
  return best_ic;
}

double AlphaPool::OptimizeWeights(const WeightOptParams& params) {
  if (entries_.empty()) {
    throw RuntimeError("cannot optimize an empty pool");
  }
  const double before = train_ic_;
  std::vector<PoolEntry> entries = entries_;
  double achieved = 0.0;
  try {
    achieved = OptimizeEntries(entries, params);
  } catch (const Error&) {
    return train_ic_;  // weights unchanged on non-finite gradient
  }
  if (achieved + params.tol >= before) {
    entries_ = std::move(entries);
    train_ic_ = achieved;
  }
  return train_ic_;
}

double AlphaPool::JointCoverage(const std::vector<PoolEntry>& entries) const {
  long target_cells = 0;
  long covered_cells = 0;
  for (int i = 0; i < panel_->n_stocks(); ++i) {
    for (int t = train_range_.begin; t < train_range_.end; ++t) {
      if (std::isnan(target_->returns.At(i, t))) {
        continue;
      }
      ++target_cells;
      bool all_valid = true;
      for (const PoolEntry& entry : entries) {
        if (!entry.factor->Valid(i, t)) {
          all_valid = false;
          break;
        }
      }
      if (all_valid) {
        ++covered_cells;
      }
    }
  }
  if (target_cells == 0) {
    return 0.0;
  }
  return static_cast<double>(covered_cells) / static_cast<double>(target_cells);
}

std::optional<PoolEntry> AlphaPool::BuildEntry(const ExprPtr& expr,
                                               double min_coverage) const {
  PoolEntry entry;
  entry.expr = expr;
  entry.formula = Print(expr);
  auto factor =
      std::make_shared<FactorMatrix>(ZScoreDaily(Evaluate(expr, *panel_)));
  entry.factor = std::move(factor);
  const double coverage = JointCoverage({entry});
  if (coverage <= 0.0 || coverage < min_coverage) {
    return std::nullopt;
  }
  try {
    entry.single_ic =
        Ic(*entry.factor, target_->returns, train_range_).ic;
  } catch (const Error&) {
    return std::nullopt;  // no overlap with the target
  }
  entry.weight = entry.single_ic >= 0.0 ? kInitialWeight : -kInitialWeight;
  return entry;
}

AlphaPool::Trial AlphaPool::TryAdd(const ExprPtr& expr,
                                   const WeightOptParams& params) const {
  Trial trial;
  trial.entries = entries_;
  trial.train_ic = train_ic_;

  const std::string formula = Print(expr);
  for (const PoolEntry& entry : entries_) {
    if (entry.formula == formula) {
      trial.outcome.duplicate = true;
      return trial;
    }
  }
  std::optional<PoolEntry> entry = BuildEntry(expr, min_coverage_);
  if (!entry.has_value()) {
    trial.outcome.degenerate = true;
    return trial;
  }
  trial.entries.push_back(std::move(*entry));
  if (JointCoverage(trial.entries) < min_coverage_) {
    // The factor is fine alone but collapses the pool's jointly valid set.
    trial.entries = entries_;
    trial.outcome.degenerate = true;
    return trial;
  }
  try {
    double achieved = OptimizeEntries(trial.entries, params);
    if (static_cast<int>(trial.entries.size()) > capacity_) {
      std::size_t weakest = 0;
      for (std::size_t j = 1; j < trial.entries.size(); ++j) {
        if (std::fabs(trial.entries[j].weight) <
            std::fabs(trial.entries[weakest].weight)) {
          weakest = j;
        }
      }
      trial.outcome.evicted = trial.entries[weakest].formula;
      trial.entries.erase(trial.entries.begin() +
                          static_cast<std::ptrdiff_t>(weakest));
      achieved = OptimizeEntries(trial.entries, params);
    }
    trial.train_ic = achieved;
    trial.outcome.delta_ic = achieved - train_ic_;
  } catch (const Error&) {
    // A factor that is fine alone can still leave no jointly valid data
    // once intersected with the pool; treat it like a degenerate add.
    trial.entries = entries_;
    trial.train_ic = train_ic_;
    trial.outcome = AddOutcome{};
    trial.outcome.degenerate = true;
  }
  return trial;
}

void AlphaPool::Apply(Trial&& trial) {
  entries_ = std::move(trial.entries);
  train_ic_ = trial.train_ic;
}

AddOutcome AlphaPool::AddFactor(const ExprPtr& expr,
                                const WeightOptParams& params) {
  Trial trial = TryAdd(expr, params);
  const AddOutcome outcome = trial.outcome;
  if (!outcome.duplicate && !outcome.degenerate) {
    Apply(std::move(trial));
  }
  return outcome;
}

std::vector<std::string> AlphaPool::Seed(const std::vector<ExprPtr>& exprs,
                                         const WeightOptParams& params) {
  if (static_cast<int>(exprs.size()) > capacity_) {
    throw ConfigError("seed list exceeds pool capacity");
  }
  std::vector<std::string> warnings;
  for (const ExprPtr& expr : exprs) {
    const AddOutcome outcome = AddFactor(expr, params);
    if (outcome.degenerate) {
      warnings.push_back("degenerate seed skipped: " + Print(expr));
    } else if (outcome.duplicate) {
      warnings.push_back("duplicate seed skipped: " + Print(expr));
    }
  }
  return warnings;
}

std::string AlphaPool::ToJson() const {
  json doc;
  doc["capacity"] = capacity_;
  doc["train_ic"] = train_ic_;
  doc["entries"] = json::array();
  for (const PoolEntry& entry : entries_) {
    doc["entries"].push_back({{"formula", entry.formula},
                              {"weight", entry.weight}});
  }
  return doc.dump(2) + "\n";
}

AlphaPool AlphaPool::FromJson(const std::string& json_text, PanelPtr panel,
                              std::shared_ptr<const TargetPanel> target,
                              DayRange train_range) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid pool JSON: ") + e.what());
  }
  if (!doc.contains("capacity") || !doc.contains("entries")) {
    throw DataError("pool JSON must contain capacity and entries");
  }
  AlphaPool pool(doc["capacity"].get<int>(), std::move(panel),
                 std::move(target), train_range);
  for (const auto& item : doc["entries"]) {
    const std::string formula = item.at("formula").get<std::string>();
    const ExprPtr expr = Parse(formula);
    // Loading applies no coverage floor; the floor guards mining-time adds.
    std::optional<PoolEntry> entry = pool.BuildEntry(expr, 0.0);
    if (!entry.has_value()) {
      throw DataError("pool entry is degenerate on this panel: " + formula);
    }
    entry->weight = item.at("weight").get<double>();
    pool.entries_.push_back(std::move(*entry));
  }
  if (!pool.entries_.empty()) {
    const std::vector<DayStats> stats = pool.BuildStats(pool.entries_);
    std::vector<double> weights(pool.entries_.size());
    for (std::size_t j = 0; j < pool.entries_.size(); ++j) {
      weights[j] = pool.entries_[j].weight;
    }
    pool.train_ic_ = pool.IcOfWeights(stats, weights);
  }
  return pool;
}

}  // namespace alphaforge
