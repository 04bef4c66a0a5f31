#pragma once

#include <stdexcept>
#include <string>

namespace vpr {

/// Malformed or invariant-violating data: container bytes, manifests, pair
/// files. Carries the name of the offending field.
class DataError : public std::runtime_error {
 public:
  DataError(std::string field, const std::string& message)
      : std::runtime_error(message), field_(std::move(field)) {}

  [[nodiscard]] const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace vpr
