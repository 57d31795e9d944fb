#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "alphaforge/panel.hpp"

namespace alphaforge {

// Operator alphabet; one entry per distinct operator symbol.
enum class OpId : int {
  kAbs, kLog, kSign, kCSRank, kScale,
  kAdd, kSub, kMul, kDiv, kPow, kGreater, kLess,
  kRef, kMean, kStd, kVar, kSum, kMax, kMin, kMed, kMad,
  kWma, kEma, kDelta, kRank, kArgmax, kArgmin, kProduct, kSkew, kKurt,
  kCov, kCorr,
  kCond,
};
inline constexpr int kNumOperators = 33;

enum class Sort { kSeries, kScalar, kTimeDelta };

// What an argument slot accepts. kSeriesOrScalar slots broadcast scalars;
// ops with such slots require at least one actual Series among them.
enum class ArgKind { kSeries, kSeriesOrScalar, kTimeDelta };

struct OperatorSignature {
  OpId id;
  std::string name;
  std::vector<ArgKind> args;
  int arity() const { return static_cast<int>(args.size()); }
  int series_arity() const;  // args excluding the trailing TimeDelta
  bool has_window() const {
    return !args.empty() && args.back() == ArgKind::kTimeDelta;
  }
};

const std::vector<OperatorSignature>& SignatureTable();
const OperatorSignature& SignatureOf(OpId op);
const std::string& OpName(OpId op);
OpId OpFromName(const std::string& name);  // case-insensitive; throws
bool IsOpName(const std::string& name);

// Generation grids for time-delta and constant tokens.
const std::vector<int>& TimeDeltaGrid();
const std::vector<double>& ConstantGrid();

enum class TokenKind { kBeg, kSep, kFeature, kConstant, kTimeDelta, kOperator };

struct Token {
  TokenKind kind = TokenKind::kBeg;
  Feature feature = Feature::kOpen;  // kFeature
  double constant = 0.0;             // kConstant
  int days = 0;                      // kTimeDelta
  OpId op = OpId::kAbs;              // kOperator

  static Token Beg() { return Token{TokenKind::kBeg}; }
  static Token Sep() { return Token{TokenKind::kSep}; }
  static Token Of(Feature f) {
    Token t{TokenKind::kFeature};
    t.feature = f;
    return t;
  }
  static Token Of(OpId op) {
    Token t{TokenKind::kOperator};
    t.op = op;
    return t;
  }
  static Token Constant(double value) {
    Token t{TokenKind::kConstant};
    t.constant = value;
    return t;
  }
  static Token Delta(int days) {
    Token t{TokenKind::kTimeDelta};
    t.days = days;
    return t;
  }

  bool operator==(const Token& other) const;
  std::string Name() const;  // stable textual id, used in files
};

Token TokenFromName(const std::string& name);

// Expression tree. Operator nodes keep their window inline; the token form
// still carries the TimeDelta as a token of its own.
struct ExprNode;
using ExprPtr = std::shared_ptr<const ExprNode>;

struct ExprNode {
  enum class Kind { kFeature, kConstant, kOp };
  Kind kind = Kind::kFeature;
  Feature feature = Feature::kOpen;
  double constant = 0.0;
  OpId op = OpId::kAbs;
  int window = 0;  // days; > 0 iff the operator takes a TimeDelta
  std::vector<ExprPtr> children;
};

ExprPtr MakeFeature(Feature f);
ExprPtr MakeConstant(double value);
// Sort-checks against the signature table; throws on violations.
ExprPtr MakeOp(OpId op, std::vector<ExprPtr> children, int window = 0);

Sort SortOf(const ExprPtr& expr);
bool ExprEqual(const ExprPtr& a, const ExprPtr& b);
// Payload token count, excluding BEG/SEP, including TimeDelta tokens.
int TokenLength(const ExprPtr& expr);

// Formula text grammar (see README): function calls Op(arg, ...), infix
// + - * / with standard precedence, unary minus, numeric literals,
// case-insensitive feature and operator names.
ExprPtr Parse(const std::string& text);
std::string Print(const ExprPtr& expr);

// Reverse-polish encoding bracketed by BEG/SEP.
std::vector<Token> ToTokens(const ExprPtr& expr);
ExprPtr FromTokens(const std::vector<Token>& tokens);

// Fixed action alphabet for the generator: grid features, constants, time
// deltas, operators, and SEP. BEG is an input-only token.
class Vocab {
 public:
  static const Vocab& Get();

  int size() const { return static_cast<int>(tokens_.size()); }
  const Token& token(int id) const { return tokens_[id]; }
  int sep_id() const { return sep_id_; }
  int beg_embedding_id() const { return size(); }  // one extra embedding row
  // -1 when the token is outside the generation alphabet.
  int IdOf(const Token& token) const;

 private:
  Vocab();
  std::vector<Token> tokens_;
  int sep_id_ = 0;
};

// Incremental validity machine for autoregressive generation.
class PrefixState {
 public:
  PrefixState() = default;

  // Applies a payload token; returns false (state unchanged) if the token
  // cannot legally extend the prefix at all (ignoring any length budget).
  bool Push(const Token& token);

  const std::vector<Sort>& stack() const { return stack_; }
  int tokens_used() const { return tokens_used_; }
  bool AtSingleSeries() const {
    return stack_.size() == 1 && stack_[0] == Sort::kSeries;
  }

 private:
  std::vector<Sort> stack_;
  int tokens_used_ = 0;
};

// Minimum number of payload tokens needed to reduce `stack` to exactly one
// Series; a large sentinel (>= kNoCompletion) when impossible.
int MinCompletionTokens(const std::vector<Sort>& stack);
inline constexpr int kNoCompletion = 1 << 20;

// Exactly the tokens t such that state+t remains completable within
// `budget` payload tokens; SEP included iff the stack is one Series.
std::vector<Token> LegalNextTokens(const PrefixState& state, int budget);
// Same set as a bitmask over Vocab ids.
std::uint64_t LegalActionMask(const PrefixState& state, int budget);

}  // namespace alphaforge
