// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "flowguide/mlp.hpp"

namespace flowguide {

inline constexpr std::string_view kCheckpointFormat = "flowguide-ckpt-v1";

struct Checkpoint {
  std::size_t epoch = 0;
  std::string config_hash;
  MLPVelocityModel model;
};

/// {"format", "epoch", "config_hash", "dims", "params"}. Parameters are
/// written with round-trip precision, so load(save(m)) is bit-exact.
std::string checkpoint_to_json(const MLPVelocityModel& model, std::size_t epoch,
                               const std::string& config_hash);
/// Throws FormatError naming the offending field on a bad tag, missing
/// field, malformed JSON or shape mismatch.
Checkpoint checkpoint_from_json(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const MLPVelocityModel& model,
                     std::size_t epoch, const std::string& config_hash);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace flowguide
