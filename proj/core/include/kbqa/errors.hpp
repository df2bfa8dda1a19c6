#pragma once

#include <stdexcept>
#include <string>

namespace kbqa {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input files.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Invalid or infeasible configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Inputs that violate an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values on the model or loss path.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Mismatched arguments between cooperating components.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace kbqa
