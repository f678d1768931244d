#pragma once

#include <stdexcept>
#include <string>

namespace tightci {

// Bad input: out-of-range parameters, malformed files, incompatible options.
// The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// The three-case batching rule produces no usable MBCR layout.
class LayoutInfeasible : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

// An exhaustive enumeration would exceed its configured budget.
class BudgetExceeded : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace tightci
