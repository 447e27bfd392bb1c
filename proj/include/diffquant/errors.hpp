// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace diffquant {

/// A forward pass requested activation quantizers for a (layer, timestep)
/// pair that has not been calibrated yet.
class UncalibratedTimestepError : public std::runtime_error {
public:
  UncalibratedTimestepError(int layer, int t)
      : std::runtime_error("no calibrated activation quantizer for layer " +
                           std::to_string(layer) + " at timestep " +
                           std::to_string(t)),
        layer_(layer), timestep_(t) {}

  int layer() const noexcept { return layer_; }
  int timestep() const noexcept { return timestep_; }

private:
  int layer_;
  int timestep_;
};

/// Training produced a non-finite loss; carries the offending step index.
class TrainingFailure : public std::runtime_error {
public:
  explicit TrainingFailure(int step)
      : std::runtime_error("training diverged (non-finite loss) at step " +
                           std::to_string(step)),
        step_(step) {}

  int step() const noexcept { return step_; }

private:
  int step_;
};

/// Unreadable or invalid experiment configuration. Message names the field.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Persisted state does not match the configuration it is used with
/// (e.g. a quantizer table whose bit schedule disagrees with the config).
class ConsistencyError : public std::runtime_error {
public:
  explicit ConsistencyError(const std::string& what)
      : std::runtime_error(what) {}
};

/// A required input file (checkpoint, table) does not exist.
class NotFoundError : public std::runtime_error {
public:
  explicit NotFoundError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace diffquant
