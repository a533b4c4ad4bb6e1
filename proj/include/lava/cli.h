#pragma once

#include <ostream>

namespace lava {

// Entry point of the `lava` tool. JSON results go to `out`; usage and errors
// go to `err`. Returns 0 on success, 2 on bad flags, 1 on runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lava
