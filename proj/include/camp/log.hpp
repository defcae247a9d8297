#pragma once

#include <string_view>

namespace camp {

// Warnings go to stderr. warn_once prints a given key at most once per process.
void warn(std::string_view message);
void warn_once(std::string_view key, std::string_view message);

// Number of warnings emitted so far (including suppressed repeats).
std::size_t warning_count();

}  // namespace camp
