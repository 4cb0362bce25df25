#pragma once

#include <stdexcept>
#include <string>

namespace gfcn {

/// Shape or extent mismatch. `axis()` names the offending axis
/// ("batch", "height", "width", "channels", "rows", ...).
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(const std::string& op, const std::string& axis, long expected, long actual)
      : std::invalid_argument(op + ": dimension mismatch on axis '" + axis + "' (expected " +
                              std::to_string(expected) + ", got " + std::to_string(actual) + ")"),
        axis_(axis) {}
  DimensionError(const std::string& op, const std::string& axis, const std::string& detail)
      : std::invalid_argument(op + ": dimension mismatch on axis '" + axis + "': " + detail),
        axis_(axis) {}

  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string axis_;
};

/// API misuse that is not a shape problem (non-scalar loss, axis out of range).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration values. The message may list several violations.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Batch statistics requested from fewer than two samples.
class DegenerateBatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The target cannot be aligned to the available frames.
class InfeasibleAlignmentError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Point correspondences do not determine an invertible homography.
class DegenerateGeometryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Checkpoint or data file failed validation. `field()` names the failing part.
class CorruptionError : public std::runtime_error {
 public:
  CorruptionError(const std::string& field, const std::string& detail)
      : std::runtime_error("corrupt file (" + field + "): " + detail), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace gfcn
