#pragma once

// Command-line surface. Subcommands:
//   train        fit a model on a dataset directory or a synthetic task
//   eval         score a checkpoint on a dataset (optionally one fold)
//   predict      segment a single image into a PNG mask
//   inspect      print the parameter/FLOP report for a configuration
//   split-folds  write deterministic train/test fold manifests
//
// Exit codes: 0 success, 2 configuration errors, 3 I/O errors, 4 shape or
// numeric errors, 1 anything else. Every failure prints one diagnostic line.

namespace qtseg {

int run_cli(int argc, char** argv);

}  // namespace qtseg
