#pragma once

#include <optional>
#include <string>
#include <vector>

#include "alphaforge/matrix.hpp"
#include "alphaforge/panel.hpp"

namespace alphaforge {

struct ICReport {
  double ic = 0.0;
  double rank_ic = 0.0;
  std::vector<double> daily_ic;
  int days_used = 0;

  std::string ToJson() const;
};

// Mean daily cross-sectional Pearson correlation between factor and target,
// pairwise-deleting NaN cells. Days with fewer than two valid pairs or zero
// variance on either side are skipped. Throws when no day is usable.
ICReport Ic(const FactorMatrix& factor, const FactorMatrix& target,
            std::optional<DayRange> range = std::nullopt);

// Spearman analogue: Pearson over average-tied per-day ranks.
double RankIc(const FactorMatrix& factor, const FactorMatrix& target,
              std::optional<DayRange> range = std::nullopt);

// Analytic gradient of Ic(sum_j w_j f_j, target) with respect to w. A cell
// contributes only when every factor and the target are valid there,
// matching the NaN rule of the combined factor.
std::vector<double> IcWeightGradient(
    const std::vector<const FactorMatrix*>& factors,
    const std::vector<double>& weights, const FactorMatrix& target,
    std::optional<DayRange> range = std::nullopt);

}  // namespace alphaforge
