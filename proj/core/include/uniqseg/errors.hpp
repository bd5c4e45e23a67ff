// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace uniqseg {

/// Violated precondition or shape/value contract of an API.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Requested entity (scene id, checkpoint, config key) does not exist.
struct NotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Stored data is present but damaged (bad CRC, truncation, mismatch).
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// More groundtruth instances than the model has queries.
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Scene synthesis could not satisfy its own constraints.
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad or unknown configuration content.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss; message carries diagnostics.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace uniqseg
