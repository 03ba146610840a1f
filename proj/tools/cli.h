#pragma once

#include <string>
#include <vector>

namespace ecgdk::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Runs one ecgdk command line. Returns 0 on success, 1 on usage errors, 2 on data or contract
// errors. Messages go to stdout/stderr.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

}  // namespace ecgdk::cli
