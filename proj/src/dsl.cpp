#include "alphaforge/dsl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <deque>
#include <unordered_map>

#include "alphaforge/common.hpp"

namespace alphaforge {

namespace {

std::string ToLower(std::string text) {
  std::transform(text.begin(), text.end(), text.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return text;
}

std::vector<OperatorSignature> BuildSignatureTable() {
  using A = ArgKind;
  std::vector<OperatorSignature> table;
  const auto add = [&table](OpId id, const char* name, std::vector<A> args) {
    table.push_back(OperatorSignature{id, name, std::move(args)});
  };
  add(OpId::kAbs, "Abs", {A::kSeries});
  add(OpId::kLog, "Log", {A::kSeries});
  add(OpId::kSign, "Sign", {A::kSeries});
  add(OpId::kCSRank, "CSRank", {A::kSeries});
  add(OpId::kScale, "Scale", {A::kSeries});
  add(OpId::kAdd, "Add", {A::kSeriesOrScalar, A::kSeriesOrScalar});
  add(OpId::kSub, "Sub", {A::kSeriesOrScalar, A::kSeriesOrScalar});
  add(OpId::kMul, "Mul", {A::kSeriesOrScalar, A::kSeriesOrScalar});
  add(OpId::kDiv, "Div", {A::kSeriesOrScalar, A::kSeriesOrScalar});
  add(OpId::kPow, "Pow", {A::kSeriesOrScalar, A::kSeriesOrScalar});
  add(OpId::kGreater, "Greater", {A::kSeriesOrScalar, A::kSeriesOrScalar});
  add(OpId::kLess, "Less", {A::kSeriesOrScalar, A::kSeriesOrScalar});
  add(OpId::kRef, "Ref", {A::kSeries, A::kTimeDelta});
  add(OpId::kMean, "Mean", {A::kSeries, A::kTimeDelta});
  add(OpId::kStd, "Std", {A::kSeries, A::kTimeDelta});
  add(OpId::kVar, "Var", {A::kSeries, A::kTimeDelta});
  add(OpId::kSum, "Sum", {A::kSeries, A::kTimeDelta});
  add(OpId::kMax, "Max", {A::kSeries, A::kTimeDelta});
  add(OpId::kMin, "Min", {A::kSeries, A::kTimeDelta});
  add(OpId::kMed, "Med", {A::kSeries, A::kTimeDelta});
  add(OpId::kMad, "Mad", {A::kSeries, A::kTimeDelta});
  add(OpId::kWma, "WMA", {A::kSeries, A::kTimeDelta});
  add(OpId::kEma, "EMA", {A::kSeries, A::kTimeDelta});
  add(OpId::kDelta, "Delta", {A::kSeries, A::kTimeDelta});
  add(OpId::kRank, "Rank", {A::kSeries, A::kTimeDelta});
  add(OpId::kArgmax, "Argmax", {A::kSeries, A::kTimeDelta});
  add(OpId::kArgmin, "Argmin", {A::kSeries, A::kTimeDelta});
  add(OpId::kProduct, "Product", {A::kSeries, A::kTimeDelta});
  add(OpId::kSkew, "Skew", {A::kSeries, A::kTimeDelta});
  add(OpId::kKurt, "Kurt", {A::kSeries, A::kTimeDelta});
  add(OpId::kCov, "Cov", {A::kSeries, A::kSeries, A::kTimeDelta});
  add(OpId::kCorr, "Corr", {A::kSeries, A::kSeries, A::kTimeDelta});
  add(OpId::kCond, "Cond", {A::kSeriesOrScalar, A::kSeriesOrScalar,
                            A::kSeriesOrScalar, A::kSeriesOrScalar});
  return table;
}

}  // namespace

int OperatorSignature::series_arity() const {
  return arity() - (has_window() ? 1 : 0);
}

const std::vector<OperatorSignature>& SignatureTable() {
  static const std::vector<OperatorSignature> kTable = BuildSignatureTable();
  return kTable;
}

const OperatorSignature& SignatureOf(OpId op) {
  return SignatureTable()[static_cast<int>(op)];
}

const std::string& OpName(OpId op) { return SignatureOf(op).name; }

namespace {

const std::unordered_map<std::string, OpId>& OpNameIndex() {
  static const auto* kIndex = [] {
    auto* index = new std::unordered_map<std::string, OpId>;
    for (const auto& sig : SignatureTable()) {
      (*index)[ToLower(sig.name)] = sig.id;
    }
    return index;
  }();
  return *kIndex;
}

}  // namespace

bool IsOpName(const std::string& name) {
  return OpNameIndex().count(ToLower(name)) > 0;
}

OpId OpFromName(const std::string& name) {
  const auto it = OpNameIndex().find(ToLower(name));
  if (it == OpNameIndex().end()) {
    throw DataError("unknown operator: " + name);
  }
  return it->second;
}

const std::vector<int>& TimeDeltaGrid() {
  static const std::vector<int> kGrid = {5, 10, 20, 30, 40, 50, 60, 120, 252};
  return kGrid;
}

const std::vector<double>& ConstantGrid() {
  static const std::vector<double> kGrid = {-30.0, -10.0, -5.0, -2.0, -1.0,
                                            -0.5,  -0.01, 0.5,  1.0,  2.0,
                                            5.0,   10.0,  30.0};
  return kGrid;
}

bool Token::operator==(const Token& other) const {
  if (kind != other.kind) {
    return false;
  }
  switch (kind) {
    case TokenKind::kBeg:
    case TokenKind::kSep:
      return true;
    case TokenKind::kFeature:
      return feature == other.feature;
    case TokenKind::kConstant:
      return constant == other.constant;
    case TokenKind::kTimeDelta:
      return days == other.days;
    case TokenKind::kOperator:
      return op == other.op;
  }
  return false;
}

namespace {

std::string FormatDouble(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ptr);
}

}  // namespace

std::string Token::Name() const {
  switch (kind) {
    case TokenKind::kBeg:
      return "BEG";
    case TokenKind::kSep:
      return "SEP";
    case TokenKind::kFeature:
      return FeatureNames()[static_cast<int>(feature)];
    case TokenKind::kConstant:
      return FormatDouble(constant);
    case TokenKind::kTimeDelta:
      return "d" + std::to_string(days);
    case TokenKind::kOperator:
      return OpName(op);
  }
  return "?";
}

Token TokenFromName(const std::string& name) {
  if (name == "BEG") {
    return Token::Beg();
  }
  if (name == "SEP") {
    return Token::Sep();
  }
  if (name.size() > 1 && name[0] == 'd' &&
      std::isdigit(static_cast<unsigned char>(name[1])) != 0) {
    int days = 0;
    const auto [ptr, ec] =
        std::from_chars(name.data() + 1, name.data() + name.size(), days);
    if (ec == std::errc() && ptr == name.data() + name.size()) {
      return Token::Delta(days);
    }
  }
  if (IsOpName(name)) {
    return Token::Of(OpFromName(name));
  }
  const std::string lower = ToLower(name);
  for (int i = 0; i < kNumFeatures; ++i) {
    if (FeatureNames()[i] == lower) {
      return Token::Of(static_cast<Feature>(i));
    }
  }
  double value = 0.0;
  const auto [ptr, ec] =
      std::from_chars(name.data(), name.data() + name.size(), value);
  if (ec == std::errc() && ptr == name.data() + name.size()) {
    return Token::Constant(value);
  }
  throw DataError("unknown token name: " + name);
}

ExprPtr MakeFeature(Feature f) {
  auto node = std::make_shared<ExprNode>();
  node->kind = ExprNode::Kind::kFeature;
  node->feature = f;
  return node;
}

ExprPtr MakeConstant(double value) {
  auto node = std::make_shared<ExprNode>();
  node->kind = ExprNode::Kind::kConstant;
  node->constant = value;
  return node;
}

ExprPtr MakeOp(OpId op, std::vector<ExprPtr> children, int window) {
  const OperatorSignature& sig = SignatureOf(op);
  if (static_cast<int>(children.size()) != sig.series_arity()) {
    throw DataError("operator " + sig.name + " expects " +
                    std::to_string(sig.series_arity()) +
                    " expression argument(s), got " +
                    std::to_string(children.size()));
  }
  if (sig.has_window()) {
    if (window < 1) {
      throw DataError("operator " + sig.name +
                      " requires a positive time delta");
    }
  } else if (window != 0) {
    throw DataError("operator " + sig.name + " takes no time delta");
  }
  bool any_series = false;
  for (int i = 0; i < sig.series_arity(); ++i) {
    const Sort sort = SortOf(children[i]);
    if (sort == Sort::kSeries) {
      any_series = true;
    } else if (sig.args[i] == ArgKind::kSeries) {
      throw DataError("argument " + std::to_string(i + 1) + " of " + sig.name +
                      " must be a series");
    }
  }
  if (!any_series) {
    throw DataError("operator " + sig.name +
                    " needs at least one series argument");
  }
  auto node = std::make_shared<ExprNode>();
  node->kind = ExprNode::Kind::kOp;
  node->op = op;
  node->window = sig.has_window() ? window : 0;
  node->children = std::move(children);
  return node;
}

Sort SortOf(const ExprPtr& expr) {
  switch (expr->kind) {
    case ExprNode::Kind::kFeature:
      return Sort::kSeries;
    case ExprNode::Kind::kConstant:
      return Sort::kScalar;
    case ExprNode::Kind::kOp:
      return Sort::kSeries;
  }
  return Sort::kSeries;
}

bool ExprEqual(const ExprPtr& a, const ExprPtr& b) {
  if (a == b) {
    return true;
  }
  if (!a || !b || a->kind != b->kind) {
    return false;
  }
  switch (a->kind) {
    case ExprNode::Kind::kFeature:
      return a->feature == b->feature;
    case ExprNode::Kind::kConstant:
      return a->constant == b->constant;
    case ExprNode::Kind::kOp: {
      if (a->op != b->op || a->window != b->window ||
          a->children.size() != b->children.size()) {
        return false;
      }
      for (std::size_t i = 0; i < a->children.size(); ++i) {
        if (!ExprEqual(a->children[i], b->children[i])) {
          return false;
        }
      }
      return true;
    }
  }
  return false;
}

int TokenLength(const ExprPtr& expr) {
  int count = 1;  // the node's own token
  if (expr->kind == ExprNode::Kind::kOp) {
    if (SignatureOf(expr->op).has_window()) {
      ++count;  // the TimeDelta token
    }
    for (const auto& child : expr->children) {
      count += TokenLength(child);
    }
  }
  return count;
}

std::vector<Token> ToTokens(const ExprPtr& expr) {
  std::vector<Token> tokens;
  tokens.push_back(Token::Beg());
  const auto walk = [&tokens](auto&& self, const ExprPtr& node) -> void {
    switch (node->kind) {
      case ExprNode::Kind::kFeature:
        tokens.push_back(Token::Of(node->feature));
        return;
      case ExprNode::Kind::kConstant:
        tokens.push_back(Token::Constant(node->constant));
        return;
      case ExprNode::Kind::kOp:
        for (const auto& child : node->children) {
          self(self, child);
        }
        if (SignatureOf(node->op).has_window()) {
          tokens.push_back(Token::Delta(node->window));
        }
        tokens.push_back(Token::Of(node->op));
        return;
    }
  };
  walk(walk, expr);
  tokens.push_back(Token::Sep());
  return tokens;
}

ExprPtr FromTokens(const std::vector<Token>& tokens) {
  if (tokens.size() < 3 || tokens.front().kind != TokenKind::kBeg) {
    throw DataError("token sequence must start with BEG and hold a payload");
  }
  if (tokens.back().kind != TokenKind::kSep) {
    throw DataError("token sequence must end with SEP");
  }

  struct Operand {
    ExprPtr expr;   // null when this is a raw TimeDelta
    int days = 0;
  };
  std::vector<Operand> stack;
  for (std::size_t i = 1; i + 1 < tokens.size(); ++i) {
    const Token& token = tokens[i];
    const std::string at = " at token index " + std::to_string(i);
    switch (token.kind) {
      case TokenKind::kBeg:
      case TokenKind::kSep:
        throw DataError("unexpected " + token.Name() + at);
      case TokenKind::kFeature:
        stack.push_back({MakeFeature(token.feature), 0});
        break;
      case TokenKind::kConstant:
        stack.push_back({MakeConstant(token.constant), 0});
        break;
      case TokenKind::kTimeDelta:
        stack.push_back({nullptr, token.days});
        break;
      case TokenKind::kOperator: {
        const OperatorSignature& sig = SignatureOf(token.op);
        if (static_cast<int>(stack.size()) < sig.arity()) {
          throw DataError("stack underflow applying " + sig.name + at);
        }
        int window = 0;
        if (sig.has_window()) {
          if (!stack.empty() && stack.back().expr == nullptr) {
            window = stack.back().days;
            stack.pop_back();
          } else {
            throw DataError(sig.name + " expects a time delta on top" + at);
          }
        }
        std::vector<ExprPtr> children(sig.series_arity());
        for (int c = sig.series_arity() - 1; c >= 0; --c) {
          if (stack.empty() || stack.back().expr == nullptr) {
            throw DataError("argument " + std::to_string(c + 1) + " of " +
                            sig.name + " is not an expression" + at);
          }
          children[c] = stack.back().expr;
          stack.pop_back();
        }
        try {
          stack.push_back({MakeOp(token.op, std::move(children), window), 0});
        } catch (const Error& e) {
          throw DataError(std::string(e.what()) + at);
        }
        break;
      }
    }
  }
  if (stack.size() != 1) {
    throw DataError("sequence leaves " + std::to_string(stack.size()) +
                    " operands on the stack, expected 1");
  }
  if (stack[0].expr == nullptr || SortOf(stack[0].expr) != Sort::kSeries) {
    throw DataError("sequence does not reduce to a single series expression");
  }
  return stack[0].expr;
}

Vocab::Vocab() {
  for (int f = 0; f < kNumFeatures; ++f) {
    tokens_.push_back(Token::Of(static_cast<Feature>(f)));
  }
  for (double c : ConstantGrid()) {
    tokens_.push_back(Token::Constant(c));
  }
  for (int d : TimeDeltaGrid()) {
    tokens_.push_back(Token::Delta(d));
  }
  for (const auto& sig : SignatureTable()) {
    tokens_.push_back(Token::Of(sig.id));
  }
  sep_id_ = static_cast<int>(tokens_.size());
  tokens_.push_back(Token::Sep());
}

const Vocab& Vocab::Get() {
  static const Vocab kVocab;
  return kVocab;
}

int Vocab::IdOf(const Token& token) const {
  for (int i = 0; i < size(); ++i) {
    if (tokens_[i] == token) {
      return i;
    }
  }
  return -1;
}

namespace {

// Stack effects used by both Push and the completion search. An operator is
// applicable when the top of the sort stack matches its argument sorts
// (TimeDelta last, i.e. on top).
bool OperatorApplies(const OperatorSignature& sig, const std::vector<Sort>& stack) {
  const int arity = sig.arity();
  if (static_cast<int>(stack.size()) < arity) {
    return false;
  }
  bool any_series = false;
  for (int i = 0; i < arity; ++i) {
    const Sort sort = stack[stack.size() - arity + i];
    switch (sig.args[i]) {
      case ArgKind::kSeries:
        if (sort != Sort::kSeries) {
          return false;
        }
        any_series = true;
        break;
      case ArgKind::kSeriesOrScalar:
        if (sort == Sort::kTimeDelta) {
          return false;
        }
        any_series = any_series || sort == Sort::kSeries;
        break;
      case ArgKind::kTimeDelta:
        if (sort != Sort::kTimeDelta) {
          return false;
        }
        break;
    }
  }
  return any_series;
}

void ApplyOperator(const OperatorSignature& sig, std::vector<Sort>& stack) {
  stack.resize(stack.size() - sig.arity());
  stack.push_back(Sort::kSeries);
}

std::string EncodeStack(const std::vector<Sort>& stack) {
  std::string key;
  key.reserve(stack.size());
  for (Sort s : stack) {
    key.push_back(s == Sort::kSeries ? 'S' : s == Sort::kScalar ? 'C' : 'D');
  }
  return key;
}

}  // namespace

bool PrefixState::Push(const Token& token) {
  switch (token.kind) {
    case TokenKind::kBeg:
    case TokenKind::kSep:
      return false;
    case TokenKind::kFeature:
      stack_.push_back(Sort::kSeries);
      break;
    case TokenKind::kConstant:
      stack_.push_back(Sort::kScalar);
      break;
    case TokenKind::kTimeDelta:
      stack_.push_back(Sort::kTimeDelta);
      break;
    case TokenKind::kOperator: {
      const OperatorSignature& sig = SignatureOf(token.op);
      if (!OperatorApplies(sig, stack_)) {
        return false;
      }
      ApplyOperator(sig, stack_);
      ++tokens_used_;
      return true;
    }
  }
  ++tokens_used_;
  return true;
}

int MinCompletionTokens(const std::vector<Sort>& stack) {
  static std::unordered_map<std::string, int>* cache =
      new std::unordered_map<std::string, int>;
  const std::string key = EncodeStack(stack);
  if (const auto it = cache->find(key); it != cache->end()) {
    return it->second;
  }

  // Breadth-first search over sort stacks. Moves mirror one emitted token:
  // apply an operator shape, or push a Series leaf. Pushing Scalar or
  // TimeDelta leaves never shortens a completion (a Scalar still needs a
  // Series partner; a TimeDelta plus its rolling operator is a two-token
  // no-op on the stack), so the search omits them.
  struct Shape {
    int consume_series_or_scalar;  // trailing args below an optional delta
    bool wants_delta;
    bool strict_series;  // all consumed args must be Series
  };
  static const Shape kShapes[] = {
      {1, false, true},   // unary series op
      {2, false, false},  // binary arithmetic (>= 1 series enforced below)
      {4, false, false},  // Cond
      {1, true, true},    // rolling unary
      {2, true, true},    // Cov/Corr
  };

  int result = kNoCompletion;
  std::deque<std::pair<std::vector<Sort>, int>> queue;
  std::unordered_map<std::string, int> seen;
  queue.emplace_back(stack, 0);
  seen[key] = 0;
  // Stacks deeper than the query plus a small margin cannot be on a
  // shortest completion path; the bound keeps the search finite.
  const std::size_t depth_cap = stack.size() + 4;
  while (!queue.empty()) {
    auto [current, cost] = std::move(queue.front());
    queue.pop_front();
    if (current.size() == 1 && current[0] == Sort::kSeries) {
      result = cost;
      break;
    }
    const auto enqueue = [&](std::vector<Sort> next, int next_cost) {
      const std::string next_key = EncodeStack(next);
      const auto it = seen.find(next_key);
      if (it != seen.end() && it->second <= next_cost) {
        return;
      }
      seen[next_key] = next_cost;
      queue.emplace_back(std::move(next), next_cost);
    };
    for (const Shape& shape : kShapes) {
      const int arity = shape.consume_series_or_scalar + (shape.wants_delta ? 1 : 0);
      if (static_cast<int>(current.size()) < arity) {
        continue;
      }
      if (shape.wants_delta && current.back() != Sort::kTimeDelta) {
        continue;
      }
      if (!shape.wants_delta && current.back() == Sort::kTimeDelta) {
        continue;
      }
      bool ok = true;
      bool any_series = false;
      for (int i = 0; i < shape.consume_series_or_scalar; ++i) {
        const Sort sort = current[current.size() - arity + i];
        if (sort == Sort::kTimeDelta) {
          ok = false;
          break;
        }
        if (sort == Sort::kSeries) {
          any_series = true;
        } else if (shape.strict_series) {
          ok = false;
          break;
        }
      }
      if (!ok || !any_series) {
        continue;
      }
      std::vector<Sort> next(current.begin(), current.end() - arity);
      next.push_back(Sort::kSeries);
      enqueue(std::move(next), cost + 1);
    }
    if (current.size() < depth_cap) {
      std::vector<Sort> next = current;
      next.push_back(Sort::kSeries);
      enqueue(std::move(next), cost + 1);
    }
  }
  (*cache)[key] = result;
  return result;
}

std::vector<Token> LegalNextTokens(const PrefixState& state, int budget) {
  std::vector<Token> legal;
  const Vocab& vocab = Vocab::Get();
  const std::uint64_t mask = LegalActionMask(state, budget);
  for (int i = 0; i < vocab.size(); ++i) {
    if ((mask >> i) & 1ULL) {
      legal.push_back(vocab.token(i));
    }
  }
  return legal;
}

std::uint64_t LegalActionMask(const PrefixState& state, int budget) {
  const Vocab& vocab = Vocab::Get();
  std::uint64_t mask = 0;
  for (int i = 0; i < vocab.size(); ++i) {
    const Token& token = vocab.token(i);
    if (token.kind == TokenKind::kSep) {
      if (state.AtSingleSeries()) {
        mask |= 1ULL << i;
      }
      continue;
    }
    if (budget < 1) {
      continue;
    }
    PrefixState next = state;
    if (!next.Push(token)) {
      continue;
    }
    if (MinCompletionTokens(next.stack()) <= budget - 1) {
      mask |= 1ULL << i;
    }
  }
  return mask;
}

}  // namespace alphaforge
