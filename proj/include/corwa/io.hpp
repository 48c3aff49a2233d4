#pragma once

#include <string>

namespace corwa {

/// Writes to a sibling temporary file, then renames over `path`.
void write_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace corwa
