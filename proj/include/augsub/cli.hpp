#pragma once

namespace augsub {

// Entry point for the `augsub` binary. Returns the process exit code:
// 0 success, 1 runtime failure, 2 usage or configuration error.
int cli_run(int argc, char** argv);

}  // namespace augsub
