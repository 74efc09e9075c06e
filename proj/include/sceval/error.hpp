#pragma once

#include <stdexcept>

namespace sceval {

// Process exit codes; the CLI maps the exception types below onto them.
enum class ExitCode : int { ok = 0, validation = 1, backend = 2, scoring = 3 };

// Bad inputs: configuration, corpus files, templates, CLI arguments.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Completion-provider problems: network failures, provider errors, cache misses.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Scoring-stage problems: id mismatches, coverage gaps.
class ScoringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sceval
