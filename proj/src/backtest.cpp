#include "alphaforge/backtest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "alphaforge/common.hpp"

namespace alphaforge {

namespace {

std::string FormatDouble(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ptr);
}

struct Holding {
  int entry_day = 0;
  double shares = 0.0;
};

}  // namespace

BacktestReport RunBacktest(const FactorMatrix& signal,
                           const FeaturePanel& panel,
                           const BacktestParams& params) {
  if (!signal.SameShape(panel.FeatureValues(Feature::kClose))) {
    throw RuntimeError("signal and panel shapes differ");
  }
  if (params.top_k < 1) {
    throw ConfigError("top_k must be >= 1");
  }
  if (params.swap_n < 0 || params.swap_n > params.top_k) {
    throw ConfigError("swap_n must be in [0, top_k]");
  }
  if (params.min_hold_days < 0) {
    throw ConfigError("min_hold_days must be >= 0");
  }

  int day_begin = 0;
  int day_end = panel.n_days();
  if (!params.first_date.empty()) {
    const auto& dates = panel.dates();
    day_begin = static_cast<int>(
        std::lower_bound(dates.begin(), dates.end(), params.first_date) -
        dates.begin());
  }
  if (!params.last_date.empty()) {
    const auto& dates = panel.dates();
    day_end = static_cast<int>(
        std::upper_bound(dates.begin(), dates.end(), params.last_date) -
        dates.begin());
  }
  if (day_begin >= day_end) {
    throw ConfigError("backtest date range contains no trading days");
  }

  const int n = panel.n_stocks();
  BacktestReport report;
  report.initial_capital = params.initial_capital;
  double cash = params.initial_capital;
  std::map<int, Holding> holdings;  // stock index -> holding
  std::vector<double> last_close(n, kNaN);
  const double fee = params.fee_bps * 1e-4;

  std::vector<int> ranked;  // stock indices by descending signal
  for (int day = day_begin; day < day_end; ++day) {
    for (int i = 0; i < n; ++i) {
      if (panel.Masked(i, day)) {
        const double close = panel.Value(Feature::kClose, i, day);
        if (!std::isnan(close)) {
          last_close[i] = close;
        }
      }
    }

    // Rank tradable stocks with a defined signal; ties break by ticker
    // (ticker order equals stock index order).
    ranked.clear();
    for (int i = 0; i < n; ++i) {
      if (panel.Masked(i, day) && !std::isnan(signal.At(i, day))) {
        ranked.push_back(i);
      }
    }
    std::sort(ranked.begin(), ranked.end(), [&signal, day](int a, int b) {
      const double sa = signal.At(a, day);
      const double sb = signal.At(b, day);
      if (sa != sb) {
        return sa > sb;
      }
      return a < b;
    });
    std::vector<int> rank_of(n, -1);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      rank_of[ranked[r]] = static_cast<int>(r);
    }

    // Sells first: held long enough AND (out of the top K OR signal under
    // the threshold). Worst-ranked first, at most swap_n.
    std::vector<int> sell_candidates;
    for (const auto& [stock, holding] : holdings) {
      if (!panel.Masked(stock, day)) {
        continue;  // untradable; forced sells are deferred
      }
      if (day - holding.entry_day < params.min_hold_days) {
        continue;
      }
      const int rank = rank_of[stock];
      if (rank < 0) {
        continue;  // no signal today, nothing to compare
      }
      const bool out_of_top_k = rank >= params.top_k;
      const bool under_threshold =
          signal.At(stock, day) < params.enter_threshold;
      if (out_of_top_k || under_threshold) {
        sell_candidates.push_back(stock);
      }
    }
    std::sort(sell_candidates.begin(), sell_candidates.end(),
              [&rank_of](int a, int b) { return rank_of[a] > rank_of[b]; });
    if (static_cast<int>(sell_candidates.size()) > params.swap_n) {
      sell_candidates.resize(params.swap_n);
    }
    for (int stock : sell_candidates) {
      const Holding holding = holdings[stock];
      const double price = panel.Value(Feature::kClose, stock, day);
      const double proceeds = holding.shares * price * (1.0 - fee);
      cash += proceeds;
      holdings.erase(stock);
      report.trades.push_back(Trade{panel.dates()[day], panel.tickers()[stock],
                                    false, holding.shares, price, cash});
    }

    // Equity after sells, marking frozen positions at their last close.
    double position_value = 0.0;
    for (const auto& [stock, holding] : holdings) {
      const double mark = panel.Masked(stock, day)
                              ? panel.Value(Feature::kClose, stock, day)
                              : last_close[stock];
      if (!std::isnan(mark)) {
        position_value += holding.shares * mark;
      }
    }
    const double equity_now = cash + position_value;

    // Buys: highest-ranked unheld stocks inside the top K and above the
    // threshold, sized at 1/top_k of equity each.
    int buys_left = std::min(params.swap_n,
                             params.top_k - static_cast<int>(holdings.size()));
    const int top_limit = std::min<int>(params.top_k, ranked.size());
    for (int r = 0; r < top_limit && buys_left > 0; ++r) {
      const int stock = ranked[r];
      if (holdings.count(stock) > 0) {
        continue;
      }
      if (!(signal.At(stock, day) > params.enter_threshold)) {
        continue;
      }
      if (cash <= 0.0) {
        break;
      }
      const double price = panel.Value(Feature::kClose, stock, day);
      if (std::isnan(price) || price <= 0.0) {
        continue;
      }
      const double size = std::min(equity_now / params.top_k, cash);
      const double shares = size / (price * (1.0 + fee));
      if (shares <= 0.0) {
        continue;
      }
      cash -= shares * price * (1.0 + fee);
      holdings[stock] = Holding{day, shares};
      report.trades.push_back(Trade{panel.dates()[day], panel.tickers()[stock],
                                    true, shares, price, cash});
      --buys_left;
    }

    double end_value = 0.0;
    for (const auto& [stock, holding] : holdings) {
      const double mark = panel.Masked(stock, day)
                              ? panel.Value(Feature::kClose, stock, day)
                              : last_close[stock];
      if (!std::isnan(mark)) {
        end_value += holding.shares * mark;
      }
    }
    report.dates.push_back(panel.dates()[day]);
    report.cash.push_back(cash);
    report.equity.push_back(cash + end_value);
  }
  return report;
}

BenchmarkSeries LoadBenchmarkCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open benchmark file: " + path);
  }
  BenchmarkSeries series;
  std::string line;
  long line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::istringstream iss(line);
    std::string date;
    std::string level_text;
    if (!std::getline(iss, date, ',') || !std::getline(iss, level_text)) {
      throw DataError("benchmark line " + std::to_string(line_number) +
                      " is not date,level");
    }
    if (line_number == 1 && date == "date") {
      continue;  // optional header
    }
    double level = 0.0;
    const auto [ptr, ec] = std::from_chars(
        level_text.data(), level_text.data() + level_text.size(), level);
    if (ec != std::errc() || ptr != level_text.data() + level_text.size()) {
      throw DataError("benchmark line " + std::to_string(line_number) +
                      ": malformed level '" + level_text + "'");
    }
    series.dates.push_back(date);
    series.levels.push_back(level);
  }
  if (series.dates.empty()) {
    throw DataError("benchmark file has no rows: " + path);
  }
  return series;
}

ReportSummary WriteReport(const BacktestReport& report,
                          const BenchmarkSeries& benchmark,
                          const std::string& csv_path,
                          const std::string& json_path) {
  if (report.dates.empty()) {
    throw RuntimeError("backtest report is empty");
  }
  std::vector<double> bench_levels(report.dates.size(), kNaN);
  std::vector<std::string> missing;
  for (std::size_t t = 0; t < report.dates.size(); ++t) {
    bool found = false;
    for (std::size_t b = 0; b < benchmark.dates.size(); ++b) {
      if (benchmark.dates[b] == report.dates[t]) {
        bench_levels[t] = benchmark.levels[b];
        found = true;
        break;
      }
    }
    if (!found) {
      missing.push_back(report.dates[t]);
    }
  }
  if (!missing.empty()) {
    std::string joined;
    for (const auto& d : missing) {
      if (!joined.empty()) {
        joined += ", ";
      }
      joined += d;
    }
    throw DataError("benchmark is missing dates: " + joined);
  }

  ReportSummary summary;
  const double base_equity = report.initial_capital;
  const double base_bench = bench_levels.front();

  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) {
    throw DataError("cannot write report CSV: " + csv_path);
  }
  csv << "date,strategy_cum_return,benchmark_cum_return,excess\n";
  double peak = -1e300;
  std::vector<double> daily_returns;
  for (std::size_t t = 0; t < report.dates.size(); ++t) {
    const double strat = report.equity[t] / base_equity - 1.0;
    const double bench = bench_levels[t] / base_bench - 1.0;
    csv << report.dates[t] << ',' << FormatDouble(strat) << ','
        << FormatDouble(bench) << ',' << FormatDouble(strat - bench) << '\n';
    peak = std::max(peak, report.equity[t]);
    summary.max_drawdown =
        std::max(summary.max_drawdown, (peak - report.equity[t]) / peak);
    if (t > 0) {
      daily_returns.push_back(report.equity[t] / report.equity[t - 1] - 1.0);
    }
  }
  summary.total_return = report.equity.back() / base_equity - 1.0;
  if (!daily_returns.empty()) {
    double mean = 0.0;
    for (double r : daily_returns) {
      mean += r;
    }
    mean /= daily_returns.size();
    double var = 0.0;
    for (double r : daily_returns) {
      var += (r - mean) * (r - mean);
    }
    summary.daily_mean = mean;
    summary.daily_std = std::sqrt(var / daily_returns.size());
  }

  std::ofstream json(json_path, std::ios::trunc);
  if (!json) {
    throw DataError("cannot write report JSON: " + json_path);
  }
  json << "{\"total_return\":" << FormatDouble(summary.total_return)
       << ",\"max_drawdown\":" << FormatDouble(summary.max_drawdown)
       << ",\"daily_mean\":" << FormatDouble(summary.daily_mean)
       << ",\"daily_std\":" << FormatDouble(summary.daily_std) << "}\n";
  return summary;
}

void WriteEquityCsv(const BacktestReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw DataError("cannot write equity CSV: " + path);
  }
  out << "date,equity,cash,initial_capital\n";
  for (std::size_t t = 0; t < report.dates.size(); ++t) {
    out << report.dates[t] << ',' << FormatDouble(report.equity[t]) << ','
        << FormatDouble(report.cash[t]) << ','
        << (t == 0 ? FormatDouble(report.initial_capital) : "") << '\n';
  }
}

BacktestReport LoadEquityCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open equity CSV: " + path);
  }
  BacktestReport report;
  std::string line;
  long line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty() || line_number == 1) {
      continue;
    }
    std::istringstream iss(line);
    std::string date, equity_text, cash_text, cap_text;
    std::getline(iss, date, ',');
    std::getline(iss, equity_text, ',');
    std::getline(iss, cash_text, ',');
    std::getline(iss, cap_text);
    const auto parse = [&](const std::string& s) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc()) {
        throw DataError("equity CSV line " + std::to_string(line_number) +
                        ": malformed number '" + s + "'");
      }
      return v;
    };
    report.dates.push_back(date);
    report.equity.push_back(parse(equity_text));
    report.cash.push_back(parse(cash_text));
    if (!cap_text.empty()) {
      report.initial_capital = parse(cap_text);
    }
  }
  if (report.dates.empty()) {
    throw DataError("equity CSV has no rows: " + path);
  }
  if (report.initial_capital == 0.0) {
    report.initial_capital = report.equity.front();
  }
  return report;
}

void WriteTradesCsv(const BacktestReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw DataError("cannot write trades CSV: " + path);
  }
  out << "date,ticker,side,shares,price,cash_after\n";
  for (const Trade& trade : report.trades) {
    out << trade.date << ',' << trade.ticker << ','
        << (trade.is_buy ? "buy" : "sell") << ',' << FormatDouble(trade.shares)
        << ',' << FormatDouble(trade.price) << ','
        << FormatDouble(trade.cash_after) << '\n';
  }
}

}  // namespace alphaforge
