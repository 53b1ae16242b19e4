// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) {
  return orchard::cli::run_command(std::vector<std::string>(argv, argv + argc));
}
