#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gustwall/error.hpp"

namespace gustwall {

// Malformed input file. Carries the 1-based line number when known.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t line = 0);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// 64-bit FNV-1a; used for manifest hashes of inputs and configs.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t value);

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Shortest round-trippable decimal rendering ("%.17g" trimmed to what is needed).
std::string format_double(double value);
// Fixed significant digits for human-facing tables.
std::string format_sig(double value, int digits);

std::vector<std::string_view> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

double parse_double(std::string_view field, std::size_t line);
long long parse_int(std::string_view field, std::size_t line);

// Line-oriented CSV reader: skips blank lines and '#' comments, tracks line
// numbers so errors can point at the offending row.
class CsvReader {
 public:
  explicit CsvReader(std::string text);
  static CsvReader from_file(const std::filesystem::path& path);

  // Next data row; false at end of input.
  bool next(std::vector<std::string_view>& fields);
  std::size_t line() const noexcept { return line_; }
  // Comment lines seen so far, without the leading '#'.
  const std::vector<std::string>& comments() const noexcept { return comments_; }

 private:
  std::string text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
  std::vector<std::string> comments_;
};

// UTC "YYYYMMDDTHHMMSSZ" for run directory names and manifests.
std::string utc_stamp();
std::string utc_iso8601();

}  // namespace gustwall
