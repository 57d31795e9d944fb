#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "alphaforge/backtest.hpp"
#include "alphaforge/common.hpp"
#include "alphaforge/metrics.hpp"
#include "alphaforge/ops.hpp"
#include "alphaforge/panel.hpp"
#include "alphaforge/pool.hpp"
#include "alphaforge/search.hpp"

namespace alphaforge {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json LoadConfigFile(const std::string& path) {
  if (path.empty()) {
    return json::object();
  }
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file: " + path);
  }
  try {
    json doc;
    in >> doc;
    return doc;
  } catch (const json::exception& e) {
    throw ConfigError("invalid config JSON: " + std::string(e.what()));
  }
}

std::string ResolveOutputDir(const json& config, const std::string& flag_value) {
  if (const char* env = std::getenv("ALPHAFORGE_OUT"); env != nullptr && *env) {
    return env;
  }
  if (!flag_value.empty()) {
    return flag_value;
  }
  if (config.contains("output_dir")) {
    return config["output_dir"].get<std::string>();
  }
  return ".";
}

CsvSchema SchemaFromConfig(const json& config) {
  CsvSchema schema;
  if (config.contains("data") && config["data"].contains("schema")) {
    for (const auto& [key, value] : config["data"]["schema"].items()) {
      schema.columns[key] = value.get<std::string>();
    }
  }
  return schema;
}

PanelPtr LoadPanelFile(const std::string& path, const CsvSchema& schema) {
  if (!fs::exists(path)) {
    throw ConfigError("panel file does not exist: " + path);
  }
  if (IsPanelCacheFile(path)) {
    return std::make_shared<FeaturePanel>(LoadPanelCache(path));
  }
  return std::make_shared<FeaturePanel>(IngestCsv(path, schema));
}

PanelPtr PanelFromConfig(const json& config, const std::string& flag_panel) {
  std::string path = flag_panel;
  if (path.empty() && config.contains("data") &&
      config["data"].contains("panel")) {
    path = config["data"]["panel"].get<std::string>();
  }
  if (path.empty()) {
    throw ConfigError("no panel file given (flag --panel or config data.panel)");
  }
  return LoadPanelFile(path, SchemaFromConfig(config));
}

PanelSplit SplitFromConfig(const FeaturePanel& panel, const json& config) {
  if (config.contains("split")) {
    const json& s = config["split"];
    const auto range = [&s](const char* name) {
      if (!s.contains(name) || !s[name].is_array() || s[name].size() != 2) {
        throw ConfigError(std::string("config split.") + name +
                          " must be [first, last]");
      }
      return std::pair<std::string, std::string>(s[name][0].get<std::string>(),
                                                 s[name][1].get<std::string>());
    };
    const auto [tf, tl] = range("train");
    const auto [vf, vl] = range("valid");
    const auto [sf, sl] = range("test");
    return Split(panel, tf, tl, vf, vl, sf, sl);
  }
  // Default 80/10/10 split by day counts.
  const int T = panel.n_days();
  const int train_end = std::max(1, T * 8 / 10);
  const int valid_end = std::max(train_end + 1, T * 9 / 10);
  if (valid_end >= T) {
    throw ConfigError("panel too short for a default 80/10/10 split");
  }
  const auto& d = panel.dates();
  return Split(panel, d[0], d[train_end - 1], d[train_end], d[valid_end - 1],
               d[valid_end], d[T - 1]);
}

int TargetHorizon(const json& config) {
  return config.contains("target_horizon")
             ? config["target_horizon"].get<int>()
             : 20;
}

DayRange RangeFor(const PanelSplit& split, const std::string& name) {
  if (name == "train") {
    return split.train;
  }
  if (name == "valid") {
    return split.valid;
  }
  if (name == "test") {
    return split.test;
  }
  throw ConfigError("unknown split name: " + name);
}

std::vector<ExprPtr> LoadSeedFormulas(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open seed-alpha file: " + path);
  }
  std::vector<ExprPtr> exprs;
  std::string line;
  long line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line = line.substr(0, hash);
    }
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' ||
                             line.back() == '\t')) {
      line.pop_back();
    }
    std::size_t begin = 0;
    while (begin < line.size() && (line[begin] == ' ' || line[begin] == '\t')) {
      ++begin;
    }
    line = line.substr(begin);
    if (line.empty()) {
      continue;
    }
    try {
      exprs.push_back(Parse(line));
    } catch (const Error& e) {
      throw ConfigError("seed file " + path + " line " +
                        std::to_string(line_number) + ": " + e.what());
    }
  }
  return exprs;
}

std::vector<ExprPtr> SeedsFromPoolFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open seed pool file: " + path);
  }
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("invalid pool JSON in " + path + ": " + e.what());
  }
  std::vector<ExprPtr> exprs;
  for (const auto& entry : doc.at("entries")) {
    exprs.push_back(Parse(entry.at("formula").get<std::string>()));
  }
  return exprs;
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open file: " + path);
  }
  std::ostringstream oss;
  oss << in.rdbuf();
  return oss.str();
}

void WriteFile(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw DataError("cannot write file: " + path);
  }
  out << content;
}

struct MineFlags {
  std::string config_path;
  std::string panel;
  std::string out_dir;
  std::string seed_alphas;
  std::string seed_pool;
  std::string init_from;
  int pool_size = -1;
  long long rng_seed = -1;
  int updates = -1;
  bool keep_buffer = false;
  bool fresh_policy = false;
};

int RunMine(const MineFlags& flags) {
  const json config = LoadConfigFile(flags.config_path);
  const std::string out_dir = ResolveOutputDir(config, flags.out_dir);
  fs::create_directories(out_dir);

  PanelPtr panel = PanelFromConfig(config, flags.panel);
  const PanelSplit split = SplitFromConfig(*panel, config);
  auto targets = std::make_shared<TargetPanel>(
      ComputeTargets(*panel, TargetHorizon(config)));

  MiningConfig mc;
  mc.panel = panel;
  mc.targets = targets;
  mc.train_range = split.train;
  mc.valid_range = split.valid;
  if (config.contains("pool_size")) {
    mc.pool_capacity = config["pool_size"].get<int>();
  }
  if (config.contains("l_max")) {
    mc.l_max = config["l_max"].get<int>();
  }
  if (config.contains("updates")) {
    mc.updates = config["updates"].get<int>();
  }
  if (config.contains("rng_seed")) {
    mc.rng_seed = config["rng_seed"].get<std::uint64_t>();
  }
  if (config.contains("buffer_capacity")) {
    mc.buffer_capacity = config["buffer_capacity"].get<int>();
  }
  if (config.contains("commit_threshold")) {
    mc.commit_threshold = config["commit_threshold"].get<double>();
  }
  if (config.contains("min_coverage")) {
    mc.min_coverage = config["min_coverage"].get<double>();
  }
  if (config.contains("ppo")) {
    const json& p = config["ppo"];
    const auto set_int = [&p](const char* k, int& out) {
      if (p.contains(k)) out = p[k].get<int>();
    };
    const auto set_double = [&p](const char* k, double& out) {
      if (p.contains(k)) out = p[k].get<double>();
    };
    set_int("batch", mc.ppo.batch);
    set_int("epochs", mc.ppo.epochs);
    set_int("minibatch", mc.ppo.minibatch);
    set_double("clip", mc.ppo.clip);
    set_double("gamma", mc.ppo.gamma);
    set_double("lambda", mc.ppo.lambda);
    set_double("entropy_coef", mc.ppo.entropy_coef);
    set_double("value_coef", mc.ppo.value_coef);
    set_double("lr", mc.ppo.lr);
    set_double("bc_beta", mc.ppo.bc_beta);
    set_int("bc_decay_updates", mc.ppo.bc_decay_updates);
  }
  if (config.contains("weight_opt")) {
    const json& w = config["weight_opt"];
    if (w.contains("lr")) mc.weight_opt.lr = w["lr"].get<double>();
    if (w.contains("max_iters")) mc.weight_opt.max_iters = w["max_iters"].get<int>();
    if (w.contains("tol")) mc.weight_opt.tol = w["tol"].get<double>();
  }
  if (flags.pool_size > 0) {
    mc.pool_capacity = flags.pool_size;
  }
  if (flags.rng_seed >= 0) {
    mc.rng_seed = static_cast<std::uint64_t>(flags.rng_seed);
  }
  if (flags.updates >= 0) {
    mc.updates = flags.updates;
  }

  std::string seed_alphas = flags.seed_alphas;
  if (seed_alphas.empty() && config.contains("seed_alphas")) {
    seed_alphas = config["seed_alphas"].get<std::string>();
  }
  if (!seed_alphas.empty()) {
    const std::vector<ExprPtr> seeds = LoadSeedFormulas(seed_alphas);
    mc.seed_exprs.insert(mc.seed_exprs.end(), seeds.begin(), seeds.end());
  }
  if (!flags.seed_pool.empty()) {
    const std::vector<ExprPtr> seeds = SeedsFromPoolFile(flags.seed_pool);
    mc.seed_exprs.insert(mc.seed_exprs.end(), seeds.begin(), seeds.end());
  }

  std::shared_ptr<PolicyNet> initial_policy;
  std::shared_ptr<ExperienceBuffer> initial_buffer;
  if (!flags.init_from.empty()) {
    const fs::path dir(flags.init_from);
    if (!flags.fresh_policy) {
      const fs::path policy_path = dir / "policy.json";
      if (!fs::exists(policy_path)) {
        throw ConfigError("no policy checkpoint at " + policy_path.string());
      }
      initial_policy = std::make_shared<PolicyNet>(
          PolicyNet::FromJson(ReadFile(policy_path.string())));
    }
    if (flags.keep_buffer) {
      const fs::path buffer_path = dir / "buffer.json";
      if (!fs::exists(buffer_path)) {
        throw ConfigError("no buffer checkpoint at " + buffer_path.string());
      }
      initial_buffer = std::make_shared<ExperienceBuffer>(
          ExperienceBuffer::FromJson(ReadFile(buffer_path.string())));
    }
  }

  std::ofstream log_out(fs::path(out_dir) / "train_log.jsonl", std::ios::trunc);
  if (!log_out) {
    throw DataError("cannot write training log in " + out_dir);
  }
  const MiningResult result =
      Mine(mc, initial_policy, initial_buffer,
           [&log_out](const UpdateRecord& record) {
             log_out << UpdateRecordJson(record) << '\n';
             log_out.flush();
           });
  for (const std::string& warning : result.warnings) {
    std::cerr << "warning: " << warning << '\n';
  }

  WriteFile((fs::path(out_dir) / "pool.json").string(), result.pool->ToJson());
  WriteFile((fs::path(out_dir) / "policy.json").string(),
            result.policy->ToJson());
  WriteFile((fs::path(out_dir) / "buffer.json").string(),
            result.buffer->ToJson());
  std::cout << "mine: updates=" << result.log.size()
            << " pool_size=" << result.pool->size()
            << " train_ic=" << result.pool->train_ic() << '\n';
  return 0;
}

FactorMatrix PoolSignal(const AlphaPool& pool, const FeaturePanel& panel) {
  return pool.Combine(panel);
}

int RunEval(const std::string& config_path, const std::string& panel_flag,
            const std::vector<std::string>& pool_paths,
            const std::string& split_name, const std::string& export_signal,
            const std::string& out_path) {
  const json config = LoadConfigFile(config_path);
  PanelPtr panel = PanelFromConfig(config, panel_flag);
  const PanelSplit split = SplitFromConfig(*panel, config);
  auto targets = std::make_shared<TargetPanel>(
      ComputeTargets(*panel, TargetHorizon(config)));
  const DayRange range = RangeFor(split, split_name);

  std::vector<ICReport> reports;
  std::string output;
  for (const std::string& path : pool_paths) {
    if (!fs::exists(path)) {
      throw DataError("pool file does not exist: " + path);
    }
    const AlphaPool pool =
        AlphaPool::FromJson(ReadFile(path), panel, targets, split.train);
    if (pool.empty()) {
      throw DataError("pool is empty: " + path);
    }
    const FactorMatrix signal = PoolSignal(pool, *panel);
    const ICReport report = Ic(signal, targets->returns, range);
    reports.push_back(report);
    output += "{\"pool\":\"" + path + "\",\"split\":\"" + split_name +
              "\",\"report\":" + report.ToJson() + "}\n";
    if (!export_signal.empty() && reports.size() == 1) {
      WriteFactorCsv(signal, *panel, export_signal);
    }
  }
  if (reports.size() > 1) {
    const auto mean_std = [&reports](auto getter) {
      double mean = 0.0;
      for (const ICReport& r : reports) {
        mean += getter(r);
      }
      mean /= reports.size();
      double var = 0.0;
      for (const ICReport& r : reports) {
        var += (getter(r) - mean) * (getter(r) - mean);
      }
      var /= (reports.size() - 1);
      return std::pair<double, double>(mean, std::sqrt(var));
    };
    const auto [ic_mean, ic_std] =
        mean_std([](const ICReport& r) { return r.ic; });
    const auto [rank_mean, rank_std] =
        mean_std([](const ICReport& r) { return r.rank_ic; });
    std::ostringstream oss;
    oss << "{\"pools\":" << reports.size() << ",\"ic_mean\":" << ic_mean
        << ",\"ic_std\":" << ic_std << ",\"rank_ic_mean\":" << rank_mean
        << ",\"rank_ic_std\":" << rank_std << "}\n";
    output += oss.str();
  }
  std::cout << output;
  if (!out_path.empty()) {
    WriteFile(out_path, output);
  }
  return 0;
}

int RunBacktestCmd(const std::string& config_path, const std::string& panel_flag,
                   const std::string& pool_path, const std::string& out_dir_flag,
                   const std::string& benchmark_path, int top_k, int swap_n,
                   int min_hold, double enter_threshold,
                   const std::string& from_date, const std::string& to_date) {
  const json config = LoadConfigFile(config_path);
  const std::string out_dir = ResolveOutputDir(config, out_dir_flag);
  fs::create_directories(out_dir);
  PanelPtr panel = PanelFromConfig(config, panel_flag);
  const PanelSplit split = SplitFromConfig(*panel, config);
  auto targets = std::make_shared<TargetPanel>(
      ComputeTargets(*panel, TargetHorizon(config)));
  if (!fs::exists(pool_path)) {
    throw DataError("pool file does not exist: " + pool_path);
  }
  const AlphaPool pool =
      AlphaPool::FromJson(ReadFile(pool_path), panel, targets, split.train);
  if (pool.empty()) {
    throw DataError("pool is empty: " + pool_path);
  }

  BacktestParams params;
  if (config.contains("backtest")) {
    const json& b = config["backtest"];
    if (b.contains("top_k")) params.top_k = b["top_k"].get<int>();
    if (b.contains("swap_n")) params.swap_n = b["swap_n"].get<int>();
    if (b.contains("min_hold_days"))
      params.min_hold_days = b["min_hold_days"].get<int>();
    if (b.contains("enter_threshold"))
      params.enter_threshold = b["enter_threshold"].get<double>();
    if (b.contains("initial_capital"))
      params.initial_capital = b["initial_capital"].get<double>();
    if (b.contains("fee_bps")) params.fee_bps = b["fee_bps"].get<double>();
    if (b.contains("dates") && b["dates"].is_array() && b["dates"].size() == 2) {
      params.first_date = b["dates"][0].get<std::string>();
      params.last_date = b["dates"][1].get<std::string>();
    }
  }
  if (top_k > 0) params.top_k = top_k;
  if (swap_n >= 0) params.swap_n = swap_n;
  if (min_hold >= 0) params.min_hold_days = min_hold;
  if (!std::isnan(enter_threshold)) params.enter_threshold = enter_threshold;
  if (!from_date.empty()) params.first_date = from_date;
  if (!to_date.empty()) params.last_date = to_date;

  const FactorMatrix signal = PoolSignal(pool, *panel);
  const BacktestReport report = RunBacktest(signal, *panel, params);
  WriteEquityCsv(report, (fs::path(out_dir) / "backtest_equity.csv").string());
  WriteTradesCsv(report, (fs::path(out_dir) / "backtest_trades.csv").string());
  if (!benchmark_path.empty()) {
    if (!fs::exists(benchmark_path)) {
      throw DataError("benchmark file does not exist: " + benchmark_path);
    }
    const BenchmarkSeries benchmark = LoadBenchmarkCsv(benchmark_path);
    WriteReport(report, benchmark,
                (fs::path(out_dir) / "report.csv").string(),
                (fs::path(out_dir) / "report_summary.json").string());
  }
  std::cout << "backtest: days=" << report.dates.size()
            << " trades=" << report.trades.size() << " final_equity="
            << (report.equity.empty() ? 0.0 : report.equity.back()) << '\n';
  return 0;
}

int RunReport(const std::string& equity_path, const std::string& benchmark_path,
              const std::string& out_dir_flag) {
  const std::string out_dir = ResolveOutputDir(json::object(), out_dir_flag);
  fs::create_directories(out_dir);
  if (!fs::exists(equity_path)) {
    throw DataError("equity file does not exist: " + equity_path);
  }
  if (!fs::exists(benchmark_path)) {
    throw DataError("benchmark file does not exist: " + benchmark_path);
  }
  const BacktestReport report = LoadEquityCsv(equity_path);
  const BenchmarkSeries benchmark = LoadBenchmarkCsv(benchmark_path);
  const ReportSummary summary =
      WriteReport(report, benchmark, (fs::path(out_dir) / "report.csv").string(),
                  (fs::path(out_dir) / "report_summary.json").string());
  std::cout << "report: total_return=" << summary.total_return
            << " max_drawdown=" << summary.max_drawdown << '\n';
  return 0;
}

int RunIngest(const std::string& config_path, const std::string& input,
              const std::string& output) {
  const json config = LoadConfigFile(config_path);
  if (!fs::exists(input)) {
    throw ConfigError("input file does not exist: " + input);
  }
  const FeaturePanel panel = IngestCsv(input, SchemaFromConfig(config));
  SavePanelCache(panel, output);

  std::ifstream in(output, std::ios::binary);
  char magic[8];
  std::uint64_t checksum = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&checksum), sizeof checksum);
  std::cout << "ingest: stocks=" << panel.n_stocks() << " days=" << panel.n_days()
            << " span=" << panel.dates().front() << ".." << panel.dates().back()
            << " checksum=" << std::hex << checksum << std::dec << '\n';
  return 0;
}

}  // namespace
}  // namespace alphaforge

int main(int argc, char** argv) {
  using namespace alphaforge;
  CLI::App app{"alphaforge: formulaic alpha mining over stock panel data"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "parse a bar CSV into a panel cache");
  std::string ingest_config, ingest_input, ingest_output;
  ingest->add_option("--config", ingest_config, "config JSON");
  ingest->add_option("--input", ingest_input, "input CSV")->required();
  ingest->add_option("--output", ingest_output, "output cache file")->required();

  // mine
  auto* mine = app.add_subcommand("mine", "run the mining loop");
  MineFlags mf;
  mine->add_option("--config", mf.config_path, "config JSON");
  mine->add_option("--panel", mf.panel, "panel CSV or cache");
  mine->add_option("--out", mf.out_dir, "output directory");
  mine->add_option("--pool-size", mf.pool_size, "alpha pool capacity");
  mine->add_option("--rng-seed", mf.rng_seed, "PPO agent seed");
  mine->add_option("--updates", mf.updates, "number of PPO updates");
  mine->add_option("--seed-alphas", mf.seed_alphas,
                   "text file of seed formulas, one per line");
  mine->add_option("--seed-pool", mf.seed_pool,
                   "pool JSON whose formulas seed the run");
  mine->add_option("--init-from", mf.init_from,
                   "checkpoint directory of a previous run");
  mine->add_flag("--keep-buffer", mf.keep_buffer,
                 "keep the loaded experience buffer when re-seeding");
  mine->add_flag("--fresh-policy", mf.fresh_policy,
                 "ignore any checkpointed policy and start fresh");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate pool IC on a split");
  std::string eval_config, eval_panel, eval_split = "test", eval_export,
              eval_out;
  std::vector<std::string> eval_pools;
  eval->add_option("--config", eval_config, "config JSON");
  eval->add_option("--panel", eval_panel, "panel CSV or cache");
  eval->add_option("--pool", eval_pools, "pool JSON file(s)")->required();
  eval->add_option("--split", eval_split, "train|valid|test");
  eval->add_option("--export-signal", eval_export,
                   "write the combined signal as dates x tickers CSV");
  eval->add_option("--out", eval_out, "also write the report here");

  // backtest
  auto* bt = app.add_subcommand("backtest", "run the Top-K/Swap-N simulation");
  std::string bt_config, bt_panel, bt_pool, bt_out, bt_benchmark, bt_from,
      bt_to;
  int bt_topk = -1, bt_swapn = -1, bt_minhold = -1;
  double bt_threshold = std::numeric_limits<double>::quiet_NaN();
  bt->add_option("--config", bt_config, "config JSON");
  bt->add_option("--panel", bt_panel, "panel CSV or cache");
  bt->add_option("--pool", bt_pool, "pool JSON")->required();
  bt->add_option("--out", bt_out, "output directory");
  bt->add_option("--benchmark", bt_benchmark, "benchmark CSV (date,level)");
  bt->add_option("--top-k", bt_topk, "portfolio size K");
  bt->add_option("--swap-n", bt_swapn, "max daily swaps N");
  bt->add_option("--min-hold", bt_minhold, "minimum holding days H");
  bt->add_option("--enter-threshold", bt_threshold, "enter threshold E_th");
  bt->add_option("--from", bt_from, "first backtest date");
  bt->add_option("--to", bt_to, "last backtest date");

  // report
  auto* report = app.add_subcommand("report", "compare equity vs a benchmark");
  std::string rp_equity, rp_benchmark, rp_out;
  report->add_option("--equity", rp_equity, "equity CSV from backtest")
      ->required();
  report->add_option("--benchmark", rp_benchmark, "benchmark CSV")->required();
  report->add_option("--out", rp_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      return RunIngest(ingest_config, ingest_input, ingest_output);
    }
    if (*mine) {
      return RunMine(mf);
    }
    if (*eval) {
      return RunEval(eval_config, eval_panel, eval_pools, eval_split,
                     eval_export, eval_out);
    }
    if (*bt) {
      return RunBacktestCmd(bt_config, bt_panel, bt_pool, bt_out, bt_benchmark,
                            bt_topk, bt_swapn, bt_minhold, bt_threshold,
                            bt_from, bt_to);
    }
    if (*report) {
      return RunReport(rp_equity, rp_benchmark, rp_out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
