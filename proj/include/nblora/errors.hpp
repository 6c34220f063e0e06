#pragma once

#include <stdexcept>
#include <string>

namespace nblora {

/// I + U is numerically singular; the columns need re-signing first.
class SingularTopBlock : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Target matrix is not singular-value dominated by the budget.
class BudgetViolated : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Requested rank exceeds what the parameterization can represent.
class RankBudgetExceeded : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class PreconditionViolated : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training loss became non-finite.
class DivergenceDetected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration or input file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nblora
