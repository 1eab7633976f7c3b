#pragma once

namespace stpatch {

// Subcommands: partition, train, eval, bench, synth.
// Exit codes: 0 success, 1 runtime error, 2 usage or constraint error.
int cli_main(int argc, const char* const* argv);

}  // namespace stpatch
