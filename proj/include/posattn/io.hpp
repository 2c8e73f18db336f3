#pragma once

#include "posattn/core.hpp"

#include <map>
#include <string>
#include <vector>

namespace posattn {

// Shortest text with 17 significant digits.
std::string format_real(double v);

// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(const std::vector<double>& values);
    std::string to_text() const;
    int column(const std::string& name) const;  // -1 when absent
};

CsvTable parse_csv(const std::string& text);
std::vector<double> csv_column(const CsvTable& table, const std::string& name);

std::string matrix_to_csv(const Matrix& m);
// ASCII P2 grayscale, linear in [0, max entry].
std::string matrix_to_pgm(const Matrix& m);

using KeyValues = std::map<std::string, std::string>;

// Flat "key = value" lines; '#' starts a comment.
KeyValues parse_key_values(const std::string& text);
std::string key_values_to_text(const KeyValues& kv);

}  // namespace posattn
