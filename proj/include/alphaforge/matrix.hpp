#pragma once

#include <cstddef>
#include <vector>

#include "alphaforge/common.hpp"

namespace alphaforge {

// Dense (stock, day) matrix of doubles. Undefined cells hold NaN; a cell is
// valid exactly when it is finite.
class FactorMatrix {
 public:
  FactorMatrix() = default;
  FactorMatrix(int n_stocks, int n_days, double fill = kNaN)
      : n_stocks_(n_stocks),
        n_days_(n_days),
        values_(static_cast<std::size_t>(n_stocks) * n_days, fill) {}

  int n_stocks() const { return n_stocks_; }
  int n_days() const { return n_days_; }

  double& At(int stock, int day) {
    return values_[static_cast<std::size_t>(stock) * n_days_ + day];
  }
  double At(int stock, int day) const {
    return values_[static_cast<std::size_t>(stock) * n_days_ + day];
  }

  bool Valid(int stock, int day) const { return IsFiniteValue(At(stock, day)); }

  bool SameShape(const FactorMatrix& other) const {
    return n_stocks_ == other.n_stocks_ && n_days_ == other.n_days_;
  }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

 private:
  int n_stocks_ = 0;
  int n_days_ = 0;
  std::vector<double> values_;
};

}  // namespace alphaforge
