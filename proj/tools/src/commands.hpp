#pragma once

#include "config.hpp"

#include <iosfwd>

namespace milk::cli {

// Each command returns a process exit code; errors propagate as milk::Error.
int cmd_generate(const RunConfig& config, std::ostream& out);
int cmd_split(const RunConfig& config, std::ostream& out);
int cmd_train(const RunConfig& config, std::ostream& out);
int cmd_evaluate(const RunConfig& config, std::ostream& out);
int cmd_gradcheck(const RunConfig& config, std::ostream& out);
int cmd_ablate(const RunConfig& config, std::ostream& out);

// Full command line: parsing, config merge, dispatch and error-to-exit-code
// mapping (0 ok, 1 usage/config, 2 data, 3 numerical).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace milk::cli
