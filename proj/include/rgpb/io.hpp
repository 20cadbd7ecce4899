#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace rgpb {

/// Writes `contents` to a sibling temp file and renames it over `path`.
/// Parent directories are created as needed.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that round-trips the double ("nan"/"inf" spelled out).
std::string format_double(double value);

}  // namespace rgpb
