#pragma once

namespace lipsync::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config schema
// violation.
int run(int argc, char** argv);

}  // namespace lipsync::cli
