#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace dcat {

// Writes to `<path>.tmp` and renames over `path`, so readers never observe a
// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull);
std::uint64_t fnv1a_doubles(const double* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t v);

// Fixed-point rendering with `decimals` digits after the point.
std::string fixed(double v, int decimals);

}  // namespace dcat
