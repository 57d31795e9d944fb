#pragma once

#include <map>
#include <string>
#include <vector>

#include "alphaforge/matrix.hpp"
#include "alphaforge/panel.hpp"

namespace alphaforge {

struct BacktestParams {
  int top_k = 50;
  int swap_n = 5;
  int min_hold_days = 20;
  double enter_threshold = 0.0;
  std::string first_date;  // empty = panel start
  std::string last_date;   // empty = panel end
  double initial_capital = 1e6;
  double fee_bps = 0.0;
};

struct Trade {
  std::string date;
  std::string ticker;
  bool is_buy = false;
  double shares = 0.0;
  double price = 0.0;
  double cash_after = 0.0;
};

struct BacktestReport {
  std::vector<std::string> dates;
  std::vector<double> equity;
  std::vector<double> cash;
  std::vector<Trade> trades;
  double initial_capital = 0.0;
};

// Daily Top-K/Swap-N long-only simulation at the close. Sells go first,
// then buys from the updated cash. A held stock is sold when it has been
// held at least min_hold_days AND (it ranks outside the top K OR its signal
// is below enter_threshold); up to swap_n sells and buys per day. Positions
// are sized at 1/top_k of current equity. Ranking ties break by ticker.
BacktestReport RunBacktest(const FactorMatrix& signal,
                           const FeaturePanel& panel,
                           const BacktestParams& params);

struct BenchmarkSeries {
  std::vector<std::string> dates;
  std::vector<double> levels;
};
BenchmarkSeries LoadBenchmarkCsv(const std::string& path);

struct ReportSummary {
  double total_return = 0.0;
  double max_drawdown = 0.0;
  double daily_mean = 0.0;
  double daily_std = 0.0;
};

// Writes daily (date, strategy cumret, benchmark cumret, excess) CSV plus a
// JSON summary. Throws when the benchmark misses backtest dates.
ReportSummary WriteReport(const BacktestReport& report,
                          const BenchmarkSeries& benchmark,
                          const std::string& csv_path,
                          const std::string& json_path);

void WriteEquityCsv(const BacktestReport& report, const std::string& path);
BacktestReport LoadEquityCsv(const std::string& path);
void WriteTradesCsv(const BacktestReport& report, const std::string& path);

}  // namespace alphaforge
