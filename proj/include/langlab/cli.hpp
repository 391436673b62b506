#pragma once

namespace langlab {

// Full command-line surface. Subcommands: train-tokenizer, pretrain, adapt,
// eval-zeroshot, eval-crosslingual, eval-supervised, params, grid.
// Exit codes: 0 success; 2 usage/config errors (unknown flag, malformed
// config, missing file); 1 runtime failures. Errors print a single
// `error: <message>` line on stderr.
int run_command(int argc, const char* const* argv);

}  // namespace langlab
