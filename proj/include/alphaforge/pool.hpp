#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "alphaforge/dsl.hpp"
#include "alphaforge/matrix.hpp"
#include "alphaforge/metrics.hpp"
#include "alphaforge/panel.hpp"

namespace alphaforge {

struct WeightOptParams {
  double lr = 0.01;
  int max_iters = 500;
  double tol = 1e-6;
};

struct PoolEntry {
  ExprPtr expr;
  std::string formula;
  double weight = 0.0;
  // Day-wise z-scored evaluation on the pool's panel.
  std::shared_ptr<const FactorMatrix> factor;
  double single_ic = 0.0;
};

struct AddOutcome {
  double delta_ic = 0.0;
  bool duplicate = false;
  bool degenerate = false;
  std::string evicted;  // formula of the evicted entry, if any
};

// The alpha set F with weights W. Holds the training panel and target it is
// scored against; train_ic is the IC of the combined mega alpha over the
// training day range.
class AlphaPool {
 public:
  // min_coverage: fraction of target-valid training cells a factor (and the
  // joint pool) must keep defined. Without the floor, a search can game the
  // pairwise-deleted daily IC by shrinking the valid set until every
  // surviving day correlates perfectly.
  AlphaPool(int capacity, PanelPtr panel,
            std::shared_ptr<const TargetPanel> target, DayRange train_range,
            double min_coverage = 0.5);

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(entries_.size()); }
  bool empty() const { return entries_.empty(); }
  const std::vector<PoolEntry>& entries() const { return entries_; }
  double train_ic() const { return train_ic_; }
  const DayRange& train_range() const { return train_range_; }
  const FeaturePanel& panel() const { return *panel_; }
  const TargetPanel& target() const { return *target_; }

  // Weighted sum of day-wise z-scored member factors; NaN wherever any
  // member is NaN. Uses cached factors when `panel` is the pool's own.
  FactorMatrix Combine(const FeaturePanel& panel) const;
  FactorMatrix CombineCached() const;

  // Gradient ascent on train IC. Returns the achieved train_ic; never ends
  // below the entry value minus tol.
  double OptimizeWeights(const WeightOptParams& params = {});

  // Inserts (unless duplicate/degenerate), re-optimizes, evicts the
  // smallest-|weight| entry when over capacity.
  AddOutcome AddFactor(const ExprPtr& expr, const WeightOptParams& params = {});

  // Transactional probe: the result can be applied later or dropped.
  struct Trial {
    AddOutcome outcome;
    std::vector<PoolEntry> entries;
    double train_ic = 0.0;
  };
  Trial TryAdd(const ExprPtr& expr, const WeightOptParams& params = {}) const;
  void Apply(Trial&& trial);

  // add_factor over the list in order; degenerate seeds are skipped and
  // reported in the returned warnings.
  std::vector<std::string> Seed(const std::vector<ExprPtr>& exprs,
                                const WeightOptParams& params = {});

  std::string ToJson() const;
  static AlphaPool FromJson(const std::string& json_text, PanelPtr panel,
                            std::shared_ptr<const TargetPanel> target,
                            DayRange train_range);

 private:
  struct DayStats;

  std::optional<PoolEntry> BuildEntry(const ExprPtr& expr,
                                      double min_coverage) const;
  double JointCoverage(const std::vector<PoolEntry>& entries) const;
  std::vector<DayStats> BuildStats(const std::vector<PoolEntry>& entries) const;
  // Ascent over the per-day sufficient statistics; returns achieved IC.
  double OptimizeEntries(std::vector<PoolEntry>& entries,
                         const WeightOptParams& params) const;
  double IcOfWeights(const std::vector<DayStats>& stats,
                     const std::vector<double>& weights) const;

  int capacity_;
  PanelPtr panel_;
  std::shared_ptr<const TargetPanel> target_;
  DayRange train_range_;
  double min_coverage_;
  std::vector<PoolEntry> entries_;
  double train_ic_ = 0.0;
};

}  // namespace alphaforge
