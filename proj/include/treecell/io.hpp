// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

namespace treecell {

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// Throws std::runtime_error when the file cannot be read.
std::string read_text_file(const std::filesystem::path& path);

} // namespace treecell
