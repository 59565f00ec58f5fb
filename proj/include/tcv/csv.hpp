#pragma once

#include <fstream>
#include <string>
#include <vector>

// Deterministic CSV output: '.' decimal separator, '\n' line ends, header
// row, doubles printed with max_digits10 so repeated runs are byte-identical.

namespace tcv {

std::string format_double(double v);

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);

    void row(const std::vector<std::string>& cells);

    static std::string cell(double v) { return format_double(v); }
    static std::string cell(std::size_t v) { return std::to_string(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(const std::string& v) { return v; }

private:
    std::ofstream out_;
    std::size_t n_cols_;
};

} // namespace tcv
