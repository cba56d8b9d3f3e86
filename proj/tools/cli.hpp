// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 ok, 1 check or runtime failure,
// 2 usage error (bad flags, unreadable or invalid config).

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fusetrack::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Overrides train.seed when set.
inline constexpr const char* kSeedEnv = "FUSETRACK_SEED";

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fusetrack::cli
