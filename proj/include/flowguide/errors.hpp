// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flowguide {

/// Invalid configuration, task definition or command-line input.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A persisted file failed validation. `field()` names the offending key.
class FormatError : public std::runtime_error {
 public:
  FormatError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// A loss or velocity became non-finite.
class DivergedError : public std::runtime_error {
 public:
  DivergedError(std::size_t step, const std::string& what)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// The Monte-Carlo velocity oracle found too few pairs near the probe point.
class InsufficientSupportError : public std::runtime_error {
 public:
  InsufficientSupportError(double effective_samples)
      : std::runtime_error("insufficient-support: effective sample size " +
                           std::to_string(effective_samples)),
        effective_samples_(effective_samples) {}
  double effective_samples() const { return effective_samples_; }

 private:
  double effective_samples_;
};

}  // namespace flowguide
