#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "alphaforge/matrix.hpp"

namespace alphaforge {

inline constexpr int kNumFeatures = 6;

enum class Feature : int {
  kOpen = 0,
  kClose = 1,
  kHigh = 2,
  kLow = 3,
  kVolume = 4,
  kVwap = 5,
};

const std::array<std::string, kNumFeatures>& FeatureNames();
Feature FeatureFromName(const std::string& name);  // case-insensitive

// Aligned (stock x day x feature) panel. values are NaN wherever mask is
// false; price features are finite and volume >= 0 wherever mask is true.
class FeaturePanel {
 public:
  FeaturePanel(std::vector<std::string> dates, std::vector<std::string> tickers);

  int n_stocks() const { return static_cast<int>(tickers_.size()); }
  int n_days() const { return static_cast<int>(dates_.size()); }

  const std::vector<std::string>& dates() const { return dates_; }
  const std::vector<std::string>& tickers() const { return tickers_; }

  double Value(Feature f, int stock, int day) const {
    return features_[static_cast<int>(f)].At(stock, day);
  }
  double& MutableValue(Feature f, int stock, int day) {
    return features_[static_cast<int>(f)].At(stock, day);
  }
  const FactorMatrix& FeatureValues(Feature f) const {
    return features_[static_cast<int>(f)];
  }

  bool Masked(int stock, int day) const { return mask_.At(stock, day) != 0.0; }
  void SetMask(int stock, int day, bool listed) {
    mask_.At(stock, day) = listed ? 1.0 : 0.0;
  }

  // Day index of an ISO date; -1 when absent.
  int DayIndex(const std::string& date) const;

 private:
  std::vector<std::string> dates_;
  std::vector<std::string> tickers_;
  std::array<FactorMatrix, kNumFeatures> features_;
  FactorMatrix mask_;  // 1.0 listed-and-traded, 0.0 otherwise
};

using PanelPtr = std::shared_ptr<const FeaturePanel>;

// Forward returns close[t+h]/close[t] - 1, NaN where undefined.
struct TargetPanel {
  FactorMatrix returns;
  int horizon = 20;
};

// Half-open day-index range [begin, end) into a parent panel.
struct DayRange {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
};

struct PanelSplit {
  DayRange train;
  DayRange valid;
  DayRange test;
};

struct CsvSchema {
  // Maps logical column name (date, ticker, open, high, low, close, volume,
  // vwap) to the column header used in the file. Identity by default.
  std::map<std::string, std::string> columns;

  std::string Resolve(const std::string& logical) const;
};

FeaturePanel IngestCsv(const std::string& path, const CsvSchema& schema = {});

TargetPanel ComputeTargets(const FeaturePanel& panel, int horizon);

// Inclusive ISO-date ranges; throws on overlap, empty range, or dates
// outside the panel span.
PanelSplit Split(const FeaturePanel& panel,
                 const std::string& train_first, const std::string& train_last,
                 const std::string& valid_first, const std::string& valid_last,
                 const std::string& test_first, const std::string& test_last);

// Binary panel cache with a FNV-1a checksum; byte-identical for identical
// source data.
void SavePanelCache(const FeaturePanel& panel, const std::string& path);
FeaturePanel LoadPanelCache(const std::string& path);
bool IsPanelCacheFile(const std::string& path);

}  // namespace alphaforge
