#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mapclip {

// Error raised when a caller violates an interface contract (shape or
// state mismatch, inconsistent inputs).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Error raised for invalid configuration values.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Error raised when a serialized file is corrupt or has the wrong version.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Error raised when more ground-truth elements are supplied than the model
// has prediction slots.
struct CapacityError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline void require_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

inline void require_domain(bool cond, const std::string& msg) {
  if (!cond) throw std::domain_error(msg);
}

}  // namespace mapclip
