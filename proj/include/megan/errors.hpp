#pragma once

#include <stdexcept>
#include <string>

namespace megan {

/// A dataset or checkpoint file is structurally damaged (bad magic, length
/// mismatch, non-monotone offsets, ...).
struct CorruptionError : std::runtime_error {
  explicit CorruptionError(const std::string& what) : std::runtime_error(what) {}
};

/// A checkpoint was built for a different architecture configuration.
struct ConfigMismatchError : std::runtime_error {
  explicit ConfigMismatchError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace megan
