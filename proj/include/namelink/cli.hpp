#pragma once

#include <string>
#include <vector>

namespace namelink::cli {

// Runs one subcommand (gen | mine | train | eval | baseline | report).
// Exit codes: 0 success, 1 domain error, 2 usage error.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, const char* const* argv);

}  // namespace namelink::cli
