#pragma once

#include <stdexcept>
#include <string>

namespace fairtranslate {

// Invalid user input: a config value, spec field, or precondition violation.
// The message names the offending field.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
  ValidationError(const std::string& field, const std::string& msg)
      : std::runtime_error(field + ": " + msg), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Malformed file contents (annotations, checkpoints, configs).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training hit a non-finite loss; carries the name of the offending term.
class TrainingDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// CLI exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;

}  // namespace fairtranslate
