#include "alphaforge/panel.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace alphaforge {

namespace {

std::string ToLower(std::string text) {
  std::transform(text.begin(), text.end(), text.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return text;
}

std::string Trim(const std::string& text) {
  std::size_t begin = 0;
  while (begin < text.size() &&
         std::isspace(static_cast<unsigned char>(text[begin])) != 0) {
    ++begin;
  }
  std::size_t end = text.size();
  while (end > begin &&
         std::isspace(static_cast<unsigned char>(text[end - 1])) != 0) {
    --end;
  }
  return text.substr(begin, end - begin);
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream iss(line);
  while (std::getline(iss, field, ',')) {
    out.push_back(Trim(field));
  }
  if (!line.empty() && line.back() == ',') {
    out.emplace_back();
  }
  return out;
}

bool ParseDouble(const std::string& text, double& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool LooksLikeIsoDate(const std::string& text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    return false;
  }
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
    if (std::isdigit(static_cast<unsigned char>(text[i])) == 0) {
      return false;
    }
  }
  return true;
}

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t Fnv1a(const void* data, std::size_t size, std::uint64_t hash) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= kFnvPrime;
  }
  return hash;
}

constexpr char kCacheMagic[8] = {'A', 'F', 'P', 'A', 'N', 'E', 'L', '1'};

}  // namespace

const std::array<std::string, kNumFeatures>& FeatureNames() {
  static const std::array<std::string, kNumFeatures> kNames = {
      "open", "close", "high", "low", "volume", "vwap"};
  return kNames;
}

Feature FeatureFromName(const std::string& name) {
  const std::string lower = ToLower(name);
  const auto& names = FeatureNames();
  for (int i = 0; i < kNumFeatures; ++i) {
    if (names[i] == lower) {
      return static_cast<Feature>(i);
    }
  }
  throw DataError("unknown feature name: " + name);
}

FeaturePanel::FeaturePanel(std::vector<std::string> dates,
                           std::vector<std::string> tickers)
    : dates_(std::move(dates)), tickers_(std::move(tickers)) {
  for (auto& m : features_) {
    m = FactorMatrix(n_stocks(), n_days(), kNaN);
  }
  mask_ = FactorMatrix(n_stocks(), n_days(), 0.0);
}

int FeaturePanel::DayIndex(const std::string& date) const {
  const auto it = std::lower_bound(dates_.begin(), dates_.end(), date);
  if (it == dates_.end() || *it != date) {
    return -1;
  }
  return static_cast<int>(it - dates_.begin());
}

std::string CsvSchema::Resolve(const std::string& logical) const {
  const auto it = columns.find(logical);
  return it == columns.end() ? logical : it->second;
}

FeaturePanel IngestCsv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open file: " + path);
  }

  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw DataError("empty file: " + path);
  }
  if (!header_line.empty() && header_line.back() == '\r') {
    header_line.pop_back();
  }
  const std::vector<std::string> header = SplitCsvLine(header_line);

  static const char* kLogical[] = {"date",  "ticker", "open",   "high",
                                   "low",   "close",  "volume", "vwap"};
  std::unordered_map<std::string, int> column_index;
  for (std::size_t i = 0; i < header.size(); ++i) {
    column_index[ToLower(header[i])] = static_cast<int>(i);
  }
  std::array<int, 8> col{};
  for (int c = 0; c < 8; ++c) {
    const std::string wanted = ToLower(schema.Resolve(kLogical[c]));
    const auto it = column_index.find(wanted);
    if (it == column_index.end()) {
      throw DataError("missing column '" + wanted + "' in " + path);
    }
    col[c] = it->second;
  }

  struct Row {
    std::string date;
    std::string ticker;
    double v[6];  // open, high, low, close, volume, vwap (file order)
  };
  std::vector<Row> rows;
  std::set<std::string> dates;
  std::set<std::string> tickers;
  std::set<std::pair<std::string, std::string>> seen;

  std::string line;
  long line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (Trim(line).empty()) {
      continue;
    }
    const std::vector<std::string> fields = SplitCsvLine(line);
    const auto field = [&](int c) -> const std::string& {
      static const std::string kEmpty;
      return col[c] < static_cast<int>(fields.size()) ? fields[col[c]] : kEmpty;
    };
    Row row;
    row.date = field(0);
    row.ticker = field(1);
    if (!LooksLikeIsoDate(row.date)) {
      throw DataError("line " + std::to_string(line_number) +
                      ": malformed date '" + row.date + "'");
    }
    if (row.ticker.empty()) {
      throw DataError("line " + std::to_string(line_number) + ": empty ticker");
    }
    for (int c = 2; c < 8; ++c) {
      double value = 0.0;
      if (!ParseDouble(field(c), value) || !std::isfinite(value)) {
        throw DataError("line " + std::to_string(line_number) +
                        ": malformed value '" + field(c) + "' in column '" +
                        schema.Resolve(kLogical[c]) + "'");
      }
      row.v[c - 2] = value;
    }
    if (row.v[4] < 0.0) {
      throw DataError("line " + std::to_string(line_number) +
                      ": negative volume");
    }
    if (!seen.emplace(row.date, row.ticker).second) {
      throw DataError("line " + std::to_string(line_number) +
                      ": duplicate (date,ticker) = (" + row.date + "," +
                      row.ticker + ")");
    }
    dates.insert(row.date);
    tickers.insert(row.ticker);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw DataError("no data rows in " + path);
  }

  FeaturePanel panel(std::vector<std::string>(dates.begin(), dates.end()),
                     std::vector<std::string>(tickers.begin(), tickers.end()));
  std::unordered_map<std::string, int> ticker_index;
  for (int i = 0; i < panel.n_stocks(); ++i) {
    ticker_index[panel.tickers()[i]] = i;
  }
  for (const Row& row : rows) {
    const int stock = ticker_index[row.ticker];
    const int day = panel.DayIndex(row.date);
    panel.MutableValue(Feature::kOpen, stock, day) = row.v[0];
    panel.MutableValue(Feature::kHigh, stock, day) = row.v[1];
    panel.MutableValue(Feature::kLow, stock, day) = row.v[2];
    panel.MutableValue(Feature::kClose, stock, day) = row.v[3];
    panel.MutableValue(Feature::kVolume, stock, day) = row.v[4];
    panel.MutableValue(Feature::kVwap, stock, day) = row.v[5];
    panel.SetMask(stock, day, true);
  }
  return panel;
}

TargetPanel ComputeTargets(const FeaturePanel& panel, int horizon) {
  if (horizon < 1) {
    throw ConfigError("target horizon must be >= 1");
  }
  if (horizon >= panel.n_days()) {
    throw ConfigError("target horizon " + std::to_string(horizon) +
                      " >= panel length " + std::to_string(panel.n_days()));
  }
  TargetPanel targets;
  targets.horizon = horizon;
  targets.returns = FactorMatrix(panel.n_stocks(), panel.n_days(), kNaN);
  for (int i = 0; i < panel.n_stocks(); ++i) {
    for (int t = 0; t + horizon < panel.n_days(); ++t) {
      if (!panel.Masked(i, t) || !panel.Masked(i, t + horizon)) {
        continue;
      }
      const double now = panel.Value(Feature::kClose, i, t);
      const double later = panel.Value(Feature::kClose, i, t + horizon);
      if (now != 0.0) {
        targets.returns.At(i, t) = Canon(later / now - 1.0);
      }
    }
  }
  return targets;
}

namespace {

DayRange ResolveRange(const FeaturePanel& panel, const std::string& first,
                      const std::string& last, const std::string& label) {
  if (first > last) {
    throw ConfigError(label + " range is empty: " + first + " > " + last);
  }
  const auto& dates = panel.dates();
  if (first < dates.front() || last > dates.back()) {
    throw ConfigError(label + " range [" + first + ", " + last +
                      "] reaches outside panel span [" + dates.front() + ", " +
                      dates.back() + "]");
  }
  const auto begin_it = std::lower_bound(dates.begin(), dates.end(), first);
  const auto end_it = std::upper_bound(dates.begin(), dates.end(), last);
  DayRange range{static_cast<int>(begin_it - dates.begin()),
                 static_cast<int>(end_it - dates.begin())};
  if (range.size() <= 0) {
    throw ConfigError(label + " range [" + first + ", " + last +
                      "] contains no panel dates");
  }
  return range;
}

}  // namespace

PanelSplit Split(const FeaturePanel& panel,
                 const std::string& train_first, const std::string& train_last,
                 const std::string& valid_first, const std::string& valid_last,
                 const std::string& test_first, const std::string& test_last) {
  PanelSplit split;
  split.train = ResolveRange(panel, train_first, train_last, "train");
  split.valid = ResolveRange(panel, valid_first, valid_last, "valid");
  split.test = ResolveRange(panel, test_first, test_last, "test");
  const DayRange* ranges[3] = {&split.train, &split.valid, &split.test};
  const char* labels[3] = {"train", "valid", "test"};
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      if (ranges[a]->begin < ranges[b]->end && ranges[b]->begin < ranges[a]->end) {
        throw ConfigError(std::string(labels[a]) + " and " + labels[b] +
                          " ranges overlap");
      }
    }
  }
  return split;
}

void SavePanelCache(const FeaturePanel& panel, const std::string& path) {
  std::string payload;
  const auto append = [&payload](const void* data, std::size_t size) {
    payload.append(static_cast<const char*>(data), size);
  };
  const auto append_u32 = [&](std::uint32_t v) { append(&v, sizeof v); };
  const auto append_string = [&](const std::string& s) {
    append_u32(static_cast<std::uint32_t>(s.size()));
    append(s.data(), s.size());
  };

  append_u32(static_cast<std::uint32_t>(panel.n_stocks()));
  append_u32(static_cast<std::uint32_t>(panel.n_days()));
  for (const auto& d : panel.dates()) {
    append_string(d);
  }
  for (const auto& t : panel.tickers()) {
    append_string(t);
  }
  for (int i = 0; i < panel.n_stocks(); ++i) {
    for (int t = 0; t < panel.n_days(); ++t) {
      const char m = panel.Masked(i, t) ? 1 : 0;
      append(&m, 1);
    }
  }
  for (int f = 0; f < kNumFeatures; ++f) {
    const auto& values = panel.FeatureValues(static_cast<Feature>(f)).values();
    append(values.data(), values.size() * sizeof(double));
  }

  const std::uint64_t checksum = Fnv1a(payload.data(), payload.size(), kFnvOffset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot write panel cache: " + path);
  }
  out.write(kCacheMagic, sizeof kCacheMagic);
  out.write(reinterpret_cast<const char*>(&checksum), sizeof checksum);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) {
    throw DataError("short write on panel cache: " + path);
  }
}

bool IsPanelCacheFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[8] = {};
  in.read(magic, sizeof magic);
  return in && std::memcmp(magic, kCacheMagic, sizeof magic) == 0;
}

FeaturePanel LoadPanelCache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open panel cache: " + path);
  }
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCacheMagic, sizeof magic) != 0) {
    throw DataError("not a panel cache file: " + path);
  }
  std::uint64_t stored_checksum = 0;
  in.read(reinterpret_cast<char*>(&stored_checksum), sizeof stored_checksum);
  std::string payload((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  const std::uint64_t checksum = Fnv1a(payload.data(), payload.size(), kFnvOffset);
  if (checksum != stored_checksum) {
    throw DataError("panel cache checksum mismatch: " + path);
  }

  std::size_t cursor = 0;
  const auto read_bytes = [&](void* dst, std::size_t size) {
    if (cursor + size > payload.size()) {
      throw DataError("truncated panel cache: " + path);
    }
    std::memcpy(dst, payload.data() + cursor, size);
    cursor += size;
  };
  const auto read_u32 = [&]() {
    std::uint32_t v = 0;
    read_bytes(&v, sizeof v);
    return v;
  };
  const auto read_string = [&]() {
    const std::uint32_t size = read_u32();
    std::string s(size, '\0');
    read_bytes(s.data(), size);
    return s;
  };

  const std::uint32_t n_stocks = read_u32();
  const std::uint32_t n_days = read_u32();
  std::vector<std::string> dates(n_days);
  for (auto& d : dates) {
    d = read_string();
  }
  std::vector<std::string> tickers(n_stocks);
  for (auto& t : tickers) {
    t = read_string();
  }
  FeaturePanel panel(std::move(dates), std::move(tickers));
  for (int i = 0; i < panel.n_stocks(); ++i) {
    for (int t = 0; t < panel.n_days(); ++t) {
      char m = 0;
      read_bytes(&m, 1);
      panel.SetMask(i, t, m != 0);
    }
  }
  for (int f = 0; f < kNumFeatures; ++f) {
    std::vector<double> values(static_cast<std::size_t>(panel.n_stocks()) *
                               panel.n_days());
    read_bytes(values.data(), values.size() * sizeof(double));
    for (int i = 0; i < panel.n_stocks(); ++i) {
      for (int t = 0; t < panel.n_days(); ++t) {
        panel.MutableValue(static_cast<Feature>(f), i, t) =
            values[static_cast<std::size_t>(i) * panel.n_days() + t];
      }
    }
  }
  return panel;
}

}  // namespace alphaforge
