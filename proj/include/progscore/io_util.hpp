#pragma once

#include <string>
#include <vector>

namespace progscore {

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // data rows, header excluded
  // 1-based file line of each data row (header is line 1 unless blanks precede it)
  std::vector<std::size_t> row_lines;
};

/// Reads a comma-separated file. No quoting; fields are trimmed of
/// surrounding whitespace and trailing CR. Blank lines are skipped.
CsvTable read_csv(const std::string& path);

/// Parses a double, rejecting non-finite and trailing garbage.
/// `where` is prepended to error messages ("file:line: column 'age': ...").
double parse_csv_double(const std::string& cell, const std::string& where);
long parse_csv_long(const std::string& cell, const std::string& where);

/// Shortest representation that parses back to the identical double.
std::string format_double(double v);

/// Writes contents to a temp file in the target directory, then renames.
void atomic_write_file(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);

/// FNV-1a over the raw little-endian bytes of the doubles, as 16 hex digits.
std::string digest_doubles(const double* data, std::size_t n);

}  // namespace progscore
