#pragma once

#include <string>
#include <vector>

namespace lcmflow::cli {

// Entry point for the pipeline commands (synth, calibrate, evalfit,
// egomotion, report). args excludes the program name. Exit codes:
// 0 success, 1 usage error, 2 data error, 3 numerical failure.
int run(const std::vector<std::string>& args);

}  // namespace lcmflow::cli
