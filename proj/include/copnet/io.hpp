#pragma once

#include <string>

namespace copnet {

// Shortest decimal form that parses back to exactly the same double.
std::string format_double(double v);

std::string read_text_file(const std::string& path);

// Write-temp-then-rename; the destination is never observed half-written.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace copnet
