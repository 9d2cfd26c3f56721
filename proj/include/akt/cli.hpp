#pragma once

// Entry point of the `akt` tool: generate, train, eval, bench, flops.

#include <ostream>

namespace akt {

/// Runs one command. Errors become a single "error: ..." line on `err` and a
/// nonzero return value.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace akt
