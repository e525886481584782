// Error taxonomy shared across the library.
#pragma once

#include <stdexcept>
#include <string>

namespace qb {

// Bad dimensions, bad config keys, incompatible shapes.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller violated a documented precondition.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf in parameters, gradients or model outputs.
struct ModelHealthError : std::runtime_error {
  explicit ModelHealthError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (e.g. running backward twice on the same tape).
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Task sampling could not produce a feasible layout.
struct SamplingError : std::runtime_error {
  explicit SamplingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace qb
