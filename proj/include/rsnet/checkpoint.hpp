#pragma once

#include <string>

#include "rsnet/network.hpp"

namespace rsn {

/// Checkpoints live as two files sharing one stem: "<stem>.manifest", a UTF-8
/// key=value file (format_version, arch, num_classes, resolutions,
/// array_count), and "<stem>.params", a binary archive of named arrays. Each
/// archive entry is: u32 name length, name bytes, u32 ndim, u64 dims[ndim],
/// then float32 payload; all integers and floats little-endian.
///
/// Array names: "shared/<layer>/weight", "shared/fc/weight", "shared/fc/bias",
/// "bn/<resolution>/<layer>/{gamma,beta,running_mean,running_var}" and
/// "ensemble/raw_scores". Round trips are bit-exact.
void save_checkpoint(const SwitchableClassifier& model, const std::string& stem);

/// Throws std::runtime_error on version mismatch, truncated or inconsistent
/// archives, and missing arrays (naming the missing bank resolution when a
/// bank entry is absent).
SwitchableClassifier load_checkpoint(const std::string& stem);

}  // namespace rsn
