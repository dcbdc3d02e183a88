#pragma once

namespace lip2us {

// Entry point of the lip2us executable. Returns 0 on success, 2 for usage or
// configuration errors and 1 for runtime failures; failures print one line
// "error: <kind>: <message>" to stderr.
int run_cli(int argc, char** argv);

}  // namespace lip2us
