#pragma once

namespace scenegen::cli {

// Entry point behind the scenegen binary. Exit codes: 0 success, 2 invalid
// configuration (the violated invariant is printed), 3 missing artifact a
// stage depends on (the path is printed).
int run(int argc, const char* const* argv);

} // namespace scenegen::cli
