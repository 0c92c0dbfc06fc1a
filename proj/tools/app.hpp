#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace prdk::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // I/O and anything unexpected
inline constexpr int kExitConfig = 2;   // bad flags, config or input documents
inline constexpr int kExitNumeric = 3;  // non-finite values or divergence

/// Hex SHA-1 of the git blob object for `content` ("blob <size>\0" prefix).
std::string git_blob_sha1(std::string_view content);

/// Writes to a sibling temporary file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

/// Worker cap from PRDK_THREADS (default 1). Throws ConfigError when the
/// variable is set but not a positive integer.
std::size_t thread_cap();

/// Full command line without the program name, e.g. {"search", "--out", "run"}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace prdk::cli
