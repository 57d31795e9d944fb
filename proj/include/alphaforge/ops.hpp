#pragma once

#include <string>

#include "alphaforge/dsl.hpp"
#include "alphaforge/matrix.hpp"
#include "alphaforge/panel.hpp"

namespace alphaforge {

// Evaluates an expression over a panel. Domain errors (log of non-positive
// values, division by zero, zero-variance moments, warm-up rows, masked
// cells) surface as NaN cells, never as failures.
FactorMatrix Evaluate(const ExprPtr& expr, const FeaturePanel& panel);

// Building blocks behind Evaluate; arguments are already lifted to
// matrices. Exposed for direct use and testing.
FactorMatrix BroadcastConstant(double value, const FeaturePanel& panel);
FactorMatrix ApplyUnaryElementwise(OpId op, const FactorMatrix& x);
FactorMatrix ApplyBinaryElementwise(OpId op, const FactorMatrix& x,
                                    const FactorMatrix& y);
FactorMatrix ApplyRolling(OpId op, const FactorMatrix& x, int window);
FactorMatrix ApplyRollingPair(OpId op, const FactorMatrix& x,
                              const FactorMatrix& y, int window);
FactorMatrix ApplyCrossSectional(OpId op, const FactorMatrix& x);
FactorMatrix ApplyCond(const FactorMatrix& x, const FactorMatrix& y,
                       const FactorMatrix& a, const FactorMatrix& b);

// Day-wise z-score across valid stocks; a zero-variance day goes all-NaN.
FactorMatrix ZScoreDaily(const FactorMatrix& x);

// dates x tickers CSV; header row of tickers, one row per date.
void WriteFactorCsv(const FactorMatrix& values, const FeaturePanel& panel,
                    const std::string& path);

}  // namespace alphaforge
