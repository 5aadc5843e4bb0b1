// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace treecell {

/// Runs one command line (without the program name). Returns the process
/// exit status: 0 on success, 1 on invalid genomes or failed runs, 2 on
/// usage, config or data errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace treecell
