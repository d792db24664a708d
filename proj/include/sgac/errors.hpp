#pragma once

#include <stdexcept>
#include <string>

namespace sgac {

/// Incompatible tensor shapes or image dimensions.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Argument outside an operation's mathematical domain.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// NaN/Inf produced or encountered, or an optimization diverged.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bitstream, checkpoint or coder-state violations.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace sgac
