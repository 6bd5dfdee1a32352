#pragma once

#include <stdexcept>
#include <string>

namespace dynaplatoon {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Invalid or inconsistent run configuration (including CFL violations).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Numerical solver produced a state outside its admissible set.
class SolverError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Operation invoked in the wrong lifecycle state.
class StateError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Learner diverged (non-finite loss or parameters).
class TrainingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or malformed input file.
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace dynaplatoon
