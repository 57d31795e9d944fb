#include <cctype>
#include <charconv>
#include <cmath>
#include <string>
#include <vector>

#include "alphaforge/common.hpp"
#include "alphaforge/dsl.hpp"

namespace alphaforge {

namespace {

struct Lexeme {
  enum class Kind { kNumber, kIdent, kLParen, kRParen, kComma, kPlus, kMinus,
                    kStar, kSlash, kEnd };
  Kind kind = Kind::kEnd;
  double number = 0.0;
  std::string ident;
  int offset = 0;
};

class Lexer {
 public:
  explicit Lexer(const std::string& text) : text_(text) { Advance(); }

  const Lexeme& Peek() const { return current_; }

  Lexeme Take() {
    Lexeme out = current_;
    Advance();
    return out;
  }

  [[noreturn]] void Fail(const std::string& message, int offset) const {
    throw DataError("parse error at offset " + std::to_string(offset) + ": " +
                    message);
  }

 private:
  void Advance() {
    while (pos_ < text_.size() &&
           std::isspace(static_cast<unsigned char>(text_[pos_])) != 0) {
      ++pos_;
    }
    current_ = Lexeme{};
    current_.offset = static_cast<int>(pos_);
    if (pos_ >= text_.size()) {
      current_.kind = Lexeme::Kind::kEnd;
      return;
    }
    const char c = text_[pos_];
    switch (c) {
      case '(': current_.kind = Lexeme::Kind::kLParen; ++pos_; return;
      case ')': current_.kind = Lexeme::Kind::kRParen; ++pos_; return;
      case ',': current_.kind = Lexeme::Kind::kComma; ++pos_; return;
      case '+': current_.kind = Lexeme::Kind::kPlus; ++pos_; return;
      case '-': current_.kind = Lexeme::Kind::kMinus; ++pos_; return;
      case '*': current_.kind = Lexeme::Kind::kStar; ++pos_; return;
      case '/': current_.kind = Lexeme::Kind::kSlash; ++pos_; return;
      default: break;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) != 0 || c == '.') {
      double value = 0.0;
      const char* first = text_.data() + pos_;
      const char* last = text_.data() + text_.size();
      const auto [ptr, ec] = std::from_chars(first, last, value);
      if (ec != std::errc()) {
        Fail("malformed number", current_.offset);
      }
      pos_ += static_cast<std::size_t>(ptr - first);
      current_.kind = Lexeme::Kind::kNumber;
      current_.number = value;
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) != 0 || c == '_') {
      std::size_t end = pos_;
      while (end < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[end])) != 0 ||
              text_[end] == '_')) {
        ++end;
      }
      current_.kind = Lexeme::Kind::kIdent;
      current_.ident = text_.substr(pos_, end - pos_);
      pos_ = end;
      return;
    }
    Fail(std::string("unexpected character '") + c + "'", current_.offset);
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  Lexeme current_;
};

// Parsed argument: an expression, or a bare numeric literal that may still
// become a TimeDelta depending on the slot it lands in.
struct Arg {
  ExprPtr expr;
  bool is_literal = false;
  double literal = 0.0;
  int offset = 0;
};

class Parser {
 public:
  explicit Parser(const std::string& text) : lexer_(text) {}

  ExprPtr Run() {
    Arg arg = ParseExpr();
    const Lexeme& end = lexer_.Peek();
    if (end.kind != Lexeme::Kind::kEnd) {
      lexer_.Fail("trailing input", end.offset);
    }
    ExprPtr expr = Materialize(arg);
    if (SortOf(expr) != Sort::kSeries) {
      lexer_.Fail("formula must evaluate to a series, not a bare constant",
                  arg.offset);
    }
    return expr;
  }

 private:
  static ExprPtr Materialize(const Arg& arg) {
    return arg.is_literal ? MakeConstant(arg.literal) : arg.expr;
  }

  Arg MakeBinary(OpId op, const Arg& lhs, const Arg& rhs, int offset) {
    if (lhs.is_literal && rhs.is_literal) {
      // Constant-only arithmetic folds so literals like -1 stay literal.
      double value = 0.0;
      switch (op) {
        case OpId::kAdd: value = lhs.literal + rhs.literal; break;
        case OpId::kSub: value = lhs.literal - rhs.literal; break;
        case OpId::kMul: value = lhs.literal * rhs.literal; break;
        case OpId::kDiv: value = lhs.literal / rhs.literal; break;
        default:
          lexer_.Fail("constant-only operands", offset);
      }
      return Arg{nullptr, true, value, offset};
    }
    Arg out;
    out.offset = offset;
    try {
      out.expr = MakeOp(op, {Materialize(lhs), Materialize(rhs)});
    } catch (const Error& e) {
      lexer_.Fail(e.what(), offset);
    }
    return out;
  }

  Arg ParseExpr() {
    Arg lhs = ParseTerm();
    while (true) {
      const Lexeme::Kind kind = lexer_.Peek().kind;
      if (kind != Lexeme::Kind::kPlus && kind != Lexeme::Kind::kMinus) {
        return lhs;
      }
      const Lexeme op = lexer_.Take();
      Arg rhs = ParseTerm();
      lhs = MakeBinary(kind == Lexeme::Kind::kPlus ? OpId::kAdd : OpId::kSub,
                       lhs, rhs, op.offset);
    }
  }

  Arg ParseTerm() {
    Arg lhs = ParseUnary();
    while (true) {
      const Lexeme::Kind kind = lexer_.Peek().kind;
      if (kind != Lexeme::Kind::kStar && kind != Lexeme::Kind::kSlash) {
        return lhs;
      }
      const Lexeme op = lexer_.Take();
      Arg rhs = ParseUnary();
      lhs = MakeBinary(kind == Lexeme::Kind::kStar ? OpId::kMul : OpId::kDiv,
                       lhs, rhs, op.offset);
    }
  }

  Arg ParseUnary() {
    if (lexer_.Peek().kind == Lexeme::Kind::kMinus) {
      const Lexeme minus = lexer_.Take();
      Arg operand = ParseUnary();
      if (operand.is_literal) {
        operand.literal = -operand.literal;
        operand.offset = minus.offset;
        return operand;
      }
      return MakeBinary(OpId::kMul, Arg{nullptr, true, -1.0, minus.offset},
                        operand, minus.offset);
    }
    return ParsePrimary();
  }

  Arg ParsePrimary() {
    const Lexeme lexeme = lexer_.Take();
    switch (lexeme.kind) {
      case Lexeme::Kind::kNumber:
        return Arg{nullptr, true, lexeme.number, lexeme.offset};
      case Lexeme::Kind::kLParen: {
        Arg inner = ParseExpr();
        const Lexeme close = lexer_.Take();
        if (close.kind != Lexeme::Kind::kRParen) {
          lexer_.Fail("expected ')'", close.offset);
        }
        return inner;
      }
      case Lexeme::Kind::kIdent:
        if (lexer_.Peek().kind == Lexeme::Kind::kLParen) {
          return ParseCall(lexeme);
        }
        return ParseLeafIdent(lexeme);
      default:
        lexer_.Fail("expected expression", lexeme.offset);
    }
  }

  Arg ParseLeafIdent(const Lexeme& lexeme) {
    try {
      const Feature f = FeatureFromName(lexeme.ident);
      Arg out;
      out.expr = MakeFeature(f);
      out.offset = lexeme.offset;
      return out;
    } catch (const Error&) {
      lexer_.Fail("unknown identifier '" + lexeme.ident + "'", lexeme.offset);
    }
  }

  Arg ParseCall(const Lexeme& name) {
    if (!IsOpName(name.ident)) {
      lexer_.Fail("unknown operator '" + name.ident + "'", name.offset);
    }
    const OpId op = OpFromName(name.ident);
    const OperatorSignature& sig = SignatureOf(op);
    lexer_.Take();  // '('
    std::vector<Arg> args;
    if (lexer_.Peek().kind != Lexeme::Kind::kRParen) {
      while (true) {
        args.push_back(ParseExpr());
        if (lexer_.Peek().kind != Lexeme::Kind::kComma) {
          break;
        }
        lexer_.Take();
      }
    }
    const Lexeme close = lexer_.Take();
    if (close.kind != Lexeme::Kind::kRParen) {
      lexer_.Fail("expected ')' closing " + sig.name, close.offset);
    }
    if (static_cast<int>(args.size()) != sig.arity()) {
      lexer_.Fail(sig.name + " expects " + std::to_string(sig.arity()) +
                      " argument(s), got " + std::to_string(args.size()),
                  name.offset);
    }
    int window = 0;
    if (sig.has_window()) {
      const Arg& delta_arg = args.back();
      if (!delta_arg.is_literal) {
        lexer_.Fail("last argument of " + sig.name +
                        " must be a numeric time delta",
                    delta_arg.offset);
      }
      // Published alpha-101 formulas carry fractional deltas like 19.8975;
      // they round to the nearest whole day.
      window = static_cast<int>(std::lround(delta_arg.literal));
      if (window < 1) {
        lexer_.Fail("time delta must round to a positive day count",
                    delta_arg.offset);
      }
      args.pop_back();
    }
    std::vector<ExprPtr> children;
    children.reserve(args.size());
    for (const Arg& arg : args) {
      children.push_back(Materialize(arg));
    }
    Arg out;
    out.offset = name.offset;
    try {
      out.expr = MakeOp(op, std::move(children), window);
    } catch (const Error& e) {
      lexer_.Fail(e.what(), name.offset);
    }
    return out;
  }

  Lexer lexer_;
};

std::string FormatLiteral(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ptr);
}

void PrintNode(const ExprPtr& expr, std::string& out) {
  switch (expr->kind) {
    case ExprNode::Kind::kFeature:
      out += FeatureNames()[static_cast<int>(expr->feature)];
      return;
    case ExprNode::Kind::kConstant:
      out += FormatLiteral(expr->constant);
      return;
    case ExprNode::Kind::kOp:
      break;
  }
  const OperatorSignature& sig = SignatureOf(expr->op);
  const char* infix = nullptr;
  switch (expr->op) {
    case OpId::kAdd: infix = " + "; break;
    case OpId::kSub: infix = " - "; break;
    case OpId::kMul: infix = " * "; break;
    case OpId::kDiv: infix = " / "; break;
    default: break;
  }
  if (infix != nullptr) {
    out += '(';
    PrintNode(expr->children[0], out);
    out += infix;
    PrintNode(expr->children[1], out);
    out += ')';
    return;
  }
  out += sig.name;
  out += '(';
  for (std::size_t i = 0; i < expr->children.size(); ++i) {
    if (i > 0) {
      out += ", ";
    }
    PrintNode(expr->children[i], out);
  }
  if (sig.has_window()) {
    if (!expr->children.empty()) {
      out += ", ";
    }
    out += std::to_string(expr->window);
  }
  out += ')';
}

}  // namespace

ExprPtr Parse(const std::string& text) { return Parser(text).Run(); }

std::string Print(const ExprPtr& expr) {
  std::string out;
  PrintNode(expr, out);
  return out;
}

}  // namespace alphaforge
