#pragma once

#include <stdexcept>
#include <string>

namespace furrow {

/// Bad input: an invalid spec, config key, file shape or argument. Maps to
/// CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failure while running an otherwise valid request. Maps to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace furrow
