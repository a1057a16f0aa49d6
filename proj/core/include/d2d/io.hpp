#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "d2d/dynamics.hpp"

namespace d2d {

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
// Inverse of format_double; throws FormatError on malformed text.
double parse_double(std::string_view text);

// Splits one delimited line on `sep` (no quoting).
std::vector<std::string_view> split_fields(std::string_view line, char sep = ',');

inline constexpr int kDatasetFormatVersion = 1;

// Dataset as two files: a delimited table with one record per observation
// time (t,obs_x,obs_y,obs_z,truth_x,truth_y,truth_z) and a JSON metadata
// sidecar (noise level and stddevs, seed, Lorenz parameters, split bounds).
void write_dataset(const Dataset& data, const std::filesystem::path& table,
                   const std::filesystem::path& meta);
Dataset read_dataset(const std::filesystem::path& table,
                     const std::filesystem::path& meta);

// 64-bit FNV-1a content hash as 16 hex digits.
std::string content_hash(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace d2d
