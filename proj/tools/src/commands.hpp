#pragma once

#include <ostream>

namespace virtview::cli {

// Entry point of the `virtview` binary. Returns the process exit code:
// 0 ok, 2 config error, 3 data error, 4 numeric failure. Errors are reported
// on `err` as one line: error: category=<c> code=<Code> detail=<text>
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace virtview::cli
