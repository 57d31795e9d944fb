#include "alphaforge/ops.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

namespace alphaforge {

namespace {

double SignOf(double x) {
  if (x > 0.0) {
    return 1.0;
  }
  if (x < 0.0) {
    return -1.0;
  }
  return 0.0;
}

double BinaryCell(OpId op, double a, double b) {
  if (std::isnan(a) || std::isnan(b)) {
    return kNaN;
  }
  switch (op) {
    case OpId::kAdd:
      return Canon(a + b);
    case OpId::kSub:
      return Canon(a - b);
    case OpId::kMul:
      return Canon(a * b);
    case OpId::kDiv:
      return b == 0.0 ? kNaN : Canon(a / b);
    case OpId::kPow:
      return Canon(std::pow(a, b));
    case OpId::kGreater:
      return a > b ? a : b;
    case OpId::kLess:
      return a < b ? a : b;
    default:
      return kNaN;
  }
}

double UnaryCell(OpId op, double a) {
  if (std::isnan(a)) {
    return kNaN;
  }
  switch (op) {
    case OpId::kAbs:
      return std::fabs(a);
    case OpId::kLog:
      return a > 0.0 ? Canon(std::log(a)) : kNaN;
    case OpId::kSign:
      return SignOf(a);
    default:
      return kNaN;
  }
}

// Gathers the window [day - window + 1, day] of one stock into `buffer`;
// false when the window leaves the panel or contains any NaN.
bool GatherWindow(const FactorMatrix& x, int stock, int day, int window,
                  std::vector<double>& buffer) {
  if (day - window + 1 < 0) {
    return false;
  }
  buffer.clear();
  for (int t = day - window + 1; t <= day; ++t) {
    const double v = x.At(stock, t);
    if (std::isnan(v)) {
      return false;
    }
    buffer.push_back(v);
  }
  return true;
}

double WindowStat(OpId op, const std::vector<double>& w) {
  const int n = static_cast<int>(w.size());
  switch (op) {
    case OpId::kSum:
      return std::accumulate(w.begin(), w.end(), 0.0);
    case OpId::kMean:
      return std::accumulate(w.begin(), w.end(), 0.0) / n;
    case OpId::kMax:
      return *std::max_element(w.begin(), w.end());
    case OpId::kMin:
      return *std::min_element(w.begin(), w.end());
    case OpId::kProduct: {
      double p = 1.0;
      for (double v : w) {
        p *= v;
      }
      return Canon(p);
    }
    case OpId::kMed: {
      std::vector<double> sorted = w;
      std::sort(sorted.begin(), sorted.end());
      const int mid = n / 2;
      return n % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    }
    case OpId::kStd:
    case OpId::kVar:
    case OpId::kMad:
    case OpId::kSkew:
    case OpId::kKurt: {
      const double mean = std::accumulate(w.begin(), w.end(), 0.0) / n;
      double m2 = 0.0;
      double m3 = 0.0;
      double m4 = 0.0;
      double abs_dev = 0.0;
      for (double v : w) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        abs_dev += std::fabs(d);
      }
      m2 /= n;
      m3 /= n;
      m4 /= n;
      abs_dev /= n;
      switch (op) {
        case OpId::kVar:
          return m2;
        case OpId::kStd:
          return std::sqrt(m2);
        case OpId::kMad:
          return abs_dev;
        case OpId::kSkew:
          return m2 > 0.0 ? Canon(m3 / std::pow(m2, 1.5)) : kNaN;
        case OpId::kKurt:
          return m2 > 0.0 ? Canon(m4 / (m2 * m2) - 3.0) : kNaN;
        default:
          return kNaN;
      }
    }
    case OpId::kWma: {
      // Linear weights 1..n, newest heaviest.
      double num = 0.0;
      for (int i = 0; i < n; ++i) {
        num += (i + 1) * w[i];
      }
      return num / (0.5 * n * (n + 1));
    }
    case OpId::kEma: {
      const double alpha = 2.0 / (n + 1.0);
      double num = 0.0;
      double den = 0.0;
      double coef = alpha;
      for (int i = n - 1; i >= 0; --i) {  // newest first
        num += coef * w[i];
        den += coef;
        coef *= 1.0 - alpha;
      }
      return num / den;
    }
    case OpId::kRank: {
      const double current = w.back();
      int below = 0;
      int equal = 0;
      for (double v : w) {
        if (v < current) {
          ++below;
        } else if (v == current) {
          ++equal;
        }
      }
      // Average rank of the tied block, as a fraction of the window.
      const double rank = below + 0.5 * (equal + 1);
      return rank / n;
    }
    case OpId::kArgmax:
    case OpId::kArgmin: {
      // Days-ago offset of the extreme; most recent wins ties.
      int best = n - 1;
      for (int i = n - 2; i >= 0; --i) {
        const bool better =
            op == OpId::kArgmax ? w[i] > w[best] : w[i] < w[best];
        if (better) {
          best = i;
        }
      }
      return static_cast<double>(n - 1 - best);
    }
    default:
      return kNaN;
  }
}

std::string FormatCell(double value) {
  if (std::isnan(value)) {
    return "";
  }
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ptr);
}

}  // namespace

FactorMatrix BroadcastConstant(double value, const FeaturePanel& panel) {
  FactorMatrix out(panel.n_stocks(), panel.n_days(), kNaN);
  for (int i = 0; i < panel.n_stocks(); ++i) {
    for (int t = 0; t < panel.n_days(); ++t) {
      if (panel.Masked(i, t)) {
        out.At(i, t) = value;
      }
    }
  }
  return out;
}

FactorMatrix ApplyUnaryElementwise(OpId op, const FactorMatrix& x) {
  FactorMatrix out(x.n_stocks(), x.n_days(), kNaN);
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    out.values()[i] = UnaryCell(op, x.values()[i]);
  }
  return out;
}

FactorMatrix ApplyBinaryElementwise(OpId op, const FactorMatrix& x,
                                    const FactorMatrix& y) {
  FactorMatrix out(x.n_stocks(), x.n_days(), kNaN);
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    out.values()[i] = BinaryCell(op, x.values()[i], y.values()[i]);
  }
  return out;
}

FactorMatrix ApplyRolling(OpId op, const FactorMatrix& x, int window) {
  FactorMatrix out(x.n_stocks(), x.n_days(), kNaN);
  if (op == OpId::kRef || op == OpId::kDelta) {
    // Fixed-offset lookback; needs both endpoints, defined from day=window.
    for (int i = 0; i < x.n_stocks(); ++i) {
      for (int t = window; t < x.n_days(); ++t) {
        const double past = x.At(i, t - window);
        if (op == OpId::kRef) {
          out.At(i, t) = past;
        } else {
          const double now = x.At(i, t);
          out.At(i, t) =
              std::isnan(now) || std::isnan(past) ? kNaN : Canon(now - past);
        }
      }
    }
    return out;
  }
  std::vector<double> buffer;
  buffer.reserve(window);
  for (int i = 0; i < x.n_stocks(); ++i) {
    for (int t = window - 1; t < x.n_days(); ++t) {
      if (GatherWindow(x, i, t, window, buffer)) {
        out.At(i, t) = Canon(WindowStat(op, buffer));
      }
    }
  }
  return out;
}

FactorMatrix ApplyRollingPair(OpId op, const FactorMatrix& x,
                              const FactorMatrix& y, int window) {
  FactorMatrix out(x.n_stocks(), x.n_days(), kNaN);
  if (window < 2) {
    return out;  // paired moments need at least two observations
  }
  std::vector<double> wx;
  std::vector<double> wy;
  wx.reserve(window);
  wy.reserve(window);
  for (int i = 0; i < x.n_stocks(); ++i) {
    for (int t = window - 1; t < x.n_days(); ++t) {
      if (!GatherWindow(x, i, t, window, wx) ||
          !GatherWindow(y, i, t, window, wy)) {
        continue;
      }
      const double mean_x =
          std::accumulate(wx.begin(), wx.end(), 0.0) / window;
      const double mean_y =
          std::accumulate(wy.begin(), wy.end(), 0.0) / window;
      double sxy = 0.0;
      double sxx = 0.0;
      double syy = 0.0;
      for (int j = 0; j < window; ++j) {
        sxy += (wx[j] - mean_x) * (wy[j] - mean_y);
        sxx += (wx[j] - mean_x) * (wx[j] - mean_x);
        syy += (wy[j] - mean_y) * (wy[j] - mean_y);
      }
      if (op == OpId::kCov) {
        out.At(i, t) = Canon(sxy / (window - 1));
      } else if (sxx > 0.0 && syy > 0.0) {
        out.At(i, t) = Canon(sxy / std::sqrt(sxx * syy));
      }
    }
  }
  return out;
}

FactorMatrix ApplyCrossSectional(OpId op, const FactorMatrix& x) {
  FactorMatrix out(x.n_stocks(), x.n_days(), kNaN);
  const int n = x.n_stocks();
  std::vector<std::pair<double, int>> day_values;
  day_values.reserve(n);
  for (int t = 0; t < x.n_days(); ++t) {
    day_values.clear();
    for (int i = 0; i < n; ++i) {
      const double v = x.At(i, t);
      if (!std::isnan(v)) {
        day_values.emplace_back(v, i);
      }
    }
    if (day_values.empty()) {
      continue;
    }
    if (op == OpId::kScale) {
      double abs_sum = 0.0;
      for (const auto& [v, i] : day_values) {
        abs_sum += std::fabs(v);
      }
      if (abs_sum > 0.0) {
        for (const auto& [v, i] : day_values) {
          out.At(i, t) = Canon(v / abs_sum);
        }
      }
      continue;
    }
    // CSRank: fractional average ranks in (0, 1].
    std::sort(day_values.begin(), day_values.end());
    const int count = static_cast<int>(day_values.size());
    int start = 0;
    while (start < count) {
      int end = start;
      while (end + 1 < count &&
             day_values[end + 1].first == day_values[start].first) {
        ++end;
      }
      const double avg_rank = 0.5 * (start + end) + 1.0;
      for (int j = start; j <= end; ++j) {
        out.At(day_values[j].second, t) = avg_rank / count;
      }
      start = end + 1;
    }
  }
  return out;
}

FactorMatrix ApplyCond(const FactorMatrix& x, const FactorMatrix& y,
                       const FactorMatrix& a, const FactorMatrix& b) {
  FactorMatrix out(x.n_stocks(), x.n_days(), kNaN);
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    const double xv = x.values()[i];
    const double yv = y.values()[i];
    if (std::isnan(xv) || std::isnan(yv)) {
      continue;
    }
    out.values()[i] = xv > yv ? a.values()[i] : b.values()[i];
  }
  return out;
}

FactorMatrix ZScoreDaily(const FactorMatrix& x) {
  FactorMatrix out(x.n_stocks(), x.n_days(), kNaN);
  const int n = x.n_stocks();
  for (int t = 0; t < x.n_days(); ++t) {
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i) {
      const double v = x.At(i, t);
      if (!std::isnan(v)) {
        sum += v;
        ++count;
      }
    }
    if (count < 1) {
      continue;
    }
    const double mean = sum / count;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = x.At(i, t);
      if (!std::isnan(v)) {
        var += (v - mean) * (v - mean);
      }
    }
    var /= count;
    if (var <= 0.0) {
      continue;  // zero-variance day stays undefined
    }
    const double inv_std = 1.0 / std::sqrt(var);
    for (int i = 0; i < n; ++i) {
      const double v = x.At(i, t);
      if (!std::isnan(v)) {
        out.At(i, t) = (v - mean) * inv_std;
      }
    }
  }
  return out;
}

namespace {

struct EvalValue {
  bool is_scalar = false;
  double scalar = 0.0;
  FactorMatrix matrix;
};

// Masked cells are undefined for every operator, including ones like Ref
// whose inputs all lie on other days.
void MaskOut(FactorMatrix& values, const FeaturePanel& panel) {
  for (int i = 0; i < values.n_stocks(); ++i) {
    for (int t = 0; t < values.n_days(); ++t) {
      if (!panel.Masked(i, t)) {
        values.At(i, t) = kNaN;
      }
    }
  }
}

EvalValue EvalNode(const ExprPtr& expr, const FeaturePanel& panel) {
  switch (expr->kind) {
    case ExprNode::Kind::kFeature:
      return {false, 0.0, panel.FeatureValues(expr->feature)};
    case ExprNode::Kind::kConstant:
      return {true, expr->constant, {}};
    case ExprNode::Kind::kOp:
      break;
  }

  std::vector<EvalValue> args;
  args.reserve(expr->children.size());
  for (const auto& child : expr->children) {
    args.push_back(EvalNode(child, panel));
  }
  const auto lift = [&panel](EvalValue& v) -> const FactorMatrix& {
    if (v.is_scalar) {
      v.matrix = BroadcastConstant(v.scalar, panel);
      v.is_scalar = false;
    }
    return v.matrix;
  };

  const OperatorSignature& sig = SignatureOf(expr->op);
  EvalValue out;
  switch (expr->op) {
    case OpId::kAbs:
    case OpId::kLog:
    case OpId::kSign:
      out.matrix = ApplyUnaryElementwise(expr->op, lift(args[0]));
      break;
    case OpId::kCSRank:
    case OpId::kScale:
      out.matrix = ApplyCrossSectional(expr->op, lift(args[0]));
      break;
    case OpId::kAdd:
    case OpId::kSub:
    case OpId::kMul:
    case OpId::kDiv:
    case OpId::kPow:
    case OpId::kGreater:
    case OpId::kLess:
      out.matrix = ApplyBinaryElementwise(expr->op, lift(args[0]), lift(args[1]));
      break;
    case OpId::kCov:
    case OpId::kCorr:
      out.matrix =
          ApplyRollingPair(expr->op, lift(args[0]), lift(args[1]), expr->window);
      break;
    case OpId::kCond:
      out.matrix = ApplyCond(lift(args[0]), lift(args[1]), lift(args[2]),
                             lift(args[3]));
      break;
    default:
      if (sig.has_window()) {
        out.matrix = ApplyRolling(expr->op, lift(args[0]), expr->window);
      }
      break;
  }
  MaskOut(out.matrix, panel);
  return out;
}

}  // namespace

FactorMatrix Evaluate(const ExprPtr& expr, const FeaturePanel& panel) {
  EvalValue value = EvalNode(expr, panel);
  if (value.is_scalar) {
    return BroadcastConstant(value.scalar, panel);
  }
  return value.matrix;
}

void WriteFactorCsv(const FactorMatrix& values, const FeaturePanel& panel,
                    const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw DataError("cannot write factor CSV: " + path);
  }
  out << "date";
  for (const auto& ticker : panel.tickers()) {
    out << ',' << ticker;
  }
  out << '\n';
  for (int t = 0; t < panel.n_days(); ++t) {
    out << panel.dates()[t];
    for (int i = 0; i < panel.n_stocks(); ++i) {
      out << ',' << FormatCell(values.At(i, t));
    }
    out << '\n';
  }
}

}  // namespace alphaforge
