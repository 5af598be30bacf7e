#pragma once

#include <stdexcept>
#include <string>

namespace sos {

// Incompatible tensor / parameter shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Values outside the mathematical domain of an operation (non-finite
// logits, invalid probability vectors, thresholds outside [0,1]).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// API misuse: empty sets, K > P, labels out of range, backward on a leaf.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite losses or gradients encountered during optimization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sos
