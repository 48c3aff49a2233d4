#pragma once

#include <iosfwd>

namespace corwa {

/// Exit codes: 0 success, 1 completed without the requested guarantee
/// (counterexample, unknown, budget exhausted, transfer rejected), 2 error.
/// CLI parse errors return CLI11's own codes.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

}  // namespace corwa
