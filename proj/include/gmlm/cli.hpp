#pragma once

#include <string>
#include <vector>

namespace gmlm {

/// Parses and runs one command (synth / train / eval / dump-embeddings).
/// Returns the process exit code: 0 success, 2 validation or argument
/// problems, 1 runtime failures.
int run_cli(const std::vector<std::string>& args);

}  // namespace gmlm
