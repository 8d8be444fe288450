// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace ardu::cli {

/// Parses argv and runs one subcommand. Returns 0 only when every requested
/// artifact was written; usage errors print help to `err` and return 2,
/// runtime failures print "error: ..." and return 1.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ardu::cli
