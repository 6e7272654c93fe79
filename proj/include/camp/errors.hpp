#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace camp {

/// Shape or width mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Invalid or inconsistent configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Input exceeds a fixed capacity (sequence length, frame count).
struct CapacityError : std::length_error {
  using std::length_error::length_error;
};

/// Malformed prompt sequence (e.g. a segment not terminated by the pooling token).
struct StructureError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// NaN or Inf produced by a forward op or a loss.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// API misuse, e.g. calling backward on a non-scalar.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Bad checkpoint or index file. `offset()` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace camp
