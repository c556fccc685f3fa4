#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace skillmoo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

inline constexpr const char* kVersion = "0.1.0";

/// Entry point shared by the skillmoo binary and the tests.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

enum class OutputFormat { Text, Csv, Json };

/// Small column-aligned table that can also be emitted as CSV or JSON.
struct Table {
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;

  void print(std::ostream& out, OutputFormat format) const;
};

}  // namespace skillmoo
