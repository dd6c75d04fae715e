#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace waveq::cli {

/// Runs one subcommand. Returns 0 on success, 1 on a runtime or configuration
/// error (message on `err`), 2 on a usage error (usage text on `err`).
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace waveq::cli
