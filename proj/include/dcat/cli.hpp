#pragma once

#include <iosfwd>

namespace dcat {

// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dcat
