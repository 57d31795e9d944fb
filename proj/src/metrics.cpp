#include "alphaforge/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "alphaforge/common.hpp"

namespace alphaforge {

namespace {

std::string FormatDouble(double value) {
  if (std::isnan(value)) {
    return "null";
  }
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ptr);
}

DayRange FullRange(const FactorMatrix& m) { return DayRange{0, m.n_days()}; }

// Pearson over the given pairs; NaN when degenerate (fewer than two pairs
// or zero variance on either side).
double PearsonPairs(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  if (n < 2) {
    return kNaN;
  }
  double mean_x = 0.0;
  double mean_y = 0.0;
  for (int i = 0; i < n; ++i) {
    mean_x += x[i];
    mean_y += y[i];
  }
  mean_x /= n;
  mean_y /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dx = x[i] - mean_x;
    const double dy = y[i] - mean_y;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    return kNaN;
  }
  return sxy / std::sqrt(sxx * syy);
}

// Average-tied ranks of the values, 1-based.
std::vector<double> AverageRanks(const std::vector<double>& values) {
  const int n = static_cast<int>(values.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) {
    order[i] = i;
  }
  std::sort(order.begin(), order.end(),
            [&values](int a, int b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  int start = 0;
  while (start < n) {
    int end = start;
    while (end + 1 < n && values[order[end + 1]] == values[order[start]]) {
      ++end;
    }
    const double avg_rank = 0.5 * (start + end) + 1.0;
    for (int j = start; j <= end; ++j) {
      ranks[order[j]] = avg_rank;
    }
    start = end + 1;
  }
  return ranks;
}

void GatherDayPairs(const FactorMatrix& factor, const FactorMatrix& target,
                    int day, std::vector<double>& f, std::vector<double>& y) {
  f.clear();
  y.clear();
  for (int i = 0; i < factor.n_stocks(); ++i) {
    const double fv = factor.At(i, day);
    const double yv = target.At(i, day);
    if (!std::isnan(fv) && !std::isnan(yv)) {
      f.push_back(fv);
      y.push_back(yv);
    }
  }
}

}  // namespace

std::string ICReport::ToJson() const {
  std::string out = "{\"ic\":" + FormatDouble(ic) +
                    ",\"rank_ic\":" + FormatDouble(rank_ic) +
                    ",\"days_used\":" + std::to_string(days_used) +
                    ",\"daily_ic\":[";
  for (std::size_t i = 0; i < daily_ic.size(); ++i) {
    if (i > 0) {
      out += ',';
    }
    out += FormatDouble(daily_ic[i]);
  }
  out += "]}";
  return out;
}

ICReport Ic(const FactorMatrix& factor, const FactorMatrix& target,
            std::optional<DayRange> range) {
  if (!factor.SameShape(target)) {
    throw RuntimeError("factor and target shapes differ");
  }
  const DayRange days = range.value_or(FullRange(factor));
  ICReport report;
  std::vector<double> f;
  std::vector<double> y;
  double sum_pearson = 0.0;
  double sum_spearman = 0.0;
  int days_spearman = 0;
  for (int t = days.begin; t < days.end; ++t) {
    GatherDayPairs(factor, target, t, f, y);
    const double pearson = PearsonPairs(f, y);
    if (!std::isnan(pearson)) {
      report.daily_ic.push_back(pearson);
      sum_pearson += pearson;
    }
    const double spearman = PearsonPairs(AverageRanks(f), AverageRanks(y));
    if (!std::isnan(spearman)) {
      sum_spearman += spearman;
      ++days_spearman;
    }
  }
  report.days_used = static_cast<int>(report.daily_ic.size());
  if (report.days_used == 0) {
    throw RuntimeError("no overlapping valid data");
  }
  report.ic = sum_pearson / report.days_used;
  report.rank_ic = days_spearman > 0 ? sum_spearman / days_spearman : kNaN;
  return report;
}

double RankIc(const FactorMatrix& factor, const FactorMatrix& target,
              std::optional<DayRange> range) {
  return Ic(factor, target, range).rank_ic;
}

std::vector<double> IcWeightGradient(
    const std::vector<const FactorMatrix*>& factors,
    const std::vector<double>& weights, const FactorMatrix& target,
    std::optional<DayRange> range) {
  const int k = static_cast<int>(factors.size());
  if (k < 1 || k != static_cast<int>(weights.size())) {
    throw RuntimeError("factor and weight counts differ or are empty");
  }
  const DayRange days = range.value_or(FullRange(target));
  const int n = target.n_stocks();

  std::vector<double> gradient(k, 0.0);
  std::vector<double> day_gradient(k);
  std::vector<double> centered_y;
  std::vector<std::vector<double>> centered_f(k);
  std::vector<int> stocks;
  int days_used = 0;

  for (int t = days.begin; t < days.end; ++t) {
    stocks.clear();
    for (int i = 0; i < n; ++i) {
      bool ok = !std::isnan(target.At(i, t));
      for (int j = 0; ok && j < k; ++j) {
        ok = !std::isnan(factors[j]->At(i, t));
      }
      if (ok) {
        stocks.push_back(i);
      }
    }
    const int m = static_cast<int>(stocks.size());
    if (m < 2) {
      continue;
    }

    centered_y.resize(m);
    double mean_y = 0.0;
    for (int s = 0; s < m; ++s) {
      mean_y += target.At(stocks[s], t);
    }
    mean_y /= m;
    double syy = 0.0;
    for (int s = 0; s < m; ++s) {
      centered_y[s] = target.At(stocks[s], t) - mean_y;
      syy += centered_y[s] * centered_y[s];
    }
    if (syy <= 0.0) {
      continue;
    }

    for (int j = 0; j < k; ++j) {
      centered_f[j].resize(m);
      double mean_f = 0.0;
      for (int s = 0; s < m; ++s) {
        mean_f += factors[j]->At(stocks[s], t);
      }
      mean_f /= m;
      for (int s = 0; s < m; ++s) {
        centered_f[j][s] = factors[j]->At(stocks[s], t) - mean_f;
      }
    }

    // z = sum_j w_j f_j; rho = <z,y> / (|z| |y|)
    // d rho / d w_j = <f_j,y>/(|z||y|) - <z,y><f_j,z>/(|z|^3 |y|)
    double szz = 0.0;
    double szy = 0.0;
    std::vector<double> z(m, 0.0);
    for (int j = 0; j < k; ++j) {
      for (int s = 0; s < m; ++s) {
        z[s] += weights[j] * centered_f[j][s];
      }
    }
    for (int s = 0; s < m; ++s) {
      szz += z[s] * z[s];
      szy += z[s] * centered_y[s];
    }
    if (szz <= 0.0) {
      continue;
    }
    const double norm_z = std::sqrt(szz);
    const double norm_y = std::sqrt(syy);
    for (int j = 0; j < k; ++j) {
      double sfy = 0.0;
      double sfz = 0.0;
      for (int s = 0; s < m; ++s) {
        sfy += centered_f[j][s] * centered_y[s];
        sfz += centered_f[j][s] * z[s];
      }
      day_gradient[j] =
          sfy / (norm_z * norm_y) - szy * sfz / (szz * norm_z * norm_y);
    }
    for (int j = 0; j < k; ++j) {
      gradient[j] += day_gradient[j];
    }
    ++days_used;
  }

  if (days_used == 0) {
    throw RuntimeError("no overlapping valid data");
  }
  for (double& g : gradient) {
    g /= days_used;
  }
  return gradient;
}

}  // namespace alphaforge
