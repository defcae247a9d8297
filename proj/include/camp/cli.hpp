#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace camp::cli {

// Runs one command line. Returns 0 on success, 1 on a runtime failure and 2
// on a usage error. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace camp::cli
