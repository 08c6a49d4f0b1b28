#pragma once

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <string>

#include "patchbench/core.hpp"

namespace patchbench {

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

/// Run a shell command and capture stdout. Used by the external detector and
/// defense adapters.
inline CommandResult run_command(const std::string& cmd) {
  CommandResult r;
  std::FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw IoError("popen failed for: " + cmd);
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) {
    r.output.append(buf.data(), n);
  }
  const int status = pclose(pipe);
  r.exit_code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace patchbench
