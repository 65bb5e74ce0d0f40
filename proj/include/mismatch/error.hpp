#pragma once

#include <stdexcept>
#include <string>

namespace mismatch {

/// A configuration value violates its documented invariant. The message
/// always starts with the offending field name.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& why)
      : std::invalid_argument(field + ": " + why), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace mismatch
