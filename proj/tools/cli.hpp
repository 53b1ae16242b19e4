// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace orchard::cli {

/// Runs one orchardfuse invocation. argv[0] is the program name. Returns 0 on
/// success, 1 for invalid input and 2 when a computation fails; failures write
/// a single JSON error object to `err`.
int run_command(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);
int run_command(const std::vector<std::string>& argv);

}  // namespace orchard::cli
