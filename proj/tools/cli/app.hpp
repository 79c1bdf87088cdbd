#pragma once

namespace inflare::cli {

// Parses argv and runs one subcommand. 0 on success, 2 on usage errors,
// 1 on runtime failures (with a diagnostic on stderr).
int run(int argc, const char* const* argv);

}  // namespace inflare::cli
