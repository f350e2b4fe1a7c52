#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace psilab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

// One key=value line from a config file.
struct ConfigEntry {
  std::string value;
  std::string origin;  // "path:line"
};

// Flat key=value text. '#' starts a comment; blank lines are skipped.
// Throws ConfigError anchored at "path:line" for malformed lines and
// repeated keys.
std::map<std::string, ConfigEntry> parse_config_text(const std::string& text, const std::string& path);
std::map<std::string, ConfigEntry> read_config_file(const std::string& path);

// FNV-1a 64 over "scenario=<name>\n" followed by the sorted "key=value\n"
// lines, rendered as 16 hex digits.
std::string config_hash(const std::string& scenario, const std::map<std::string, std::string>& canonical);

// Runs a subcommand. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace psilab::cli
