#pragma once

#include <stdexcept>
#include <string>

namespace epk {

/// A required input (file, checkpoint, log) is missing or incomplete.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input exists but fails validation (bad config value, format mismatch, unknown name).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace epk
