#ifndef MUFFIN_CSV_HPP
#define MUFFIN_CSV_HPP

#include <cstdio>
#include <string>
#include <vector>

namespace muffin {

// Minimal CSV support for the file formats this project owns: UTF-8, comma
// separated, no quoting (field values never contain commas or newlines).

std::vector<std::string> split_csv_line(const std::string& line);

// Reads all non-empty lines; strips a trailing '\r' so CRLF files load too.
// Throws ValidationError if the file cannot be opened.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

// Shortest decimal form that round-trips a double exactly (and always has at
// least 9 significant digits of information).
std::string format_double(double v);

double parse_double(const std::string& s, const std::string& context);
long parse_long(const std::string& s, const std::string& context);

} // namespace muffin

#endif
