#pragma once

#include <stdexcept>
#include <string>

namespace d2d {

// Base of every exception thrown by the library. `module()` names the
// component that raised it so the CLI can tag diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

// Argument outside the operation's domain (empty grid, non-finite input,
// bandwidth <= 0, series too short, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class InvalidMixtureError : public Error {
 public:
  explicit InvalidMixtureError(const std::string& what) : Error("gmm", what) {}
};

class IntegrationBlowupError : public Error {
 public:
  explicit IntegrationBlowupError(const std::string& what)
      : Error("dynamics", what) {}
};

// Non-finite activation inside the network. `step` is the recursion step
// (1-based lead index) at which it was detected.
class NumericalFailureError : public Error {
 public:
  NumericalFailureError(const std::string& what, int step)
      : Error("net", what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

class TrainingFailureError : public Error {
 public:
  explicit TrainingFailureError(const std::string& what)
      : Error("training", what) {}
};

// Malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace d2d
