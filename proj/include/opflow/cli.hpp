// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace opflow {

// Exit codes: 0 success, 1 usage, 2 data/validation, 3 numeric failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Flat key=value lines; '#' starts a comment.
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin);

// 1e-4 style for small magnitudes, shortest round-trip otherwise.
std::string compact_number(double x);

}  // namespace opflow
