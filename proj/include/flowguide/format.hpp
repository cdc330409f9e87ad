// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <string>

namespace flowguide {

/// Shortest-stable text for CSV output: 17 significant digits.
inline std::string format_real(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

}  // namespace flowguide
