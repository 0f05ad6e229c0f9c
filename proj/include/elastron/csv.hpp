#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "elastron/tensor.hpp"

namespace elastron {

// Deterministic CSV emission: doubles use shortest round-trip %.17g form.
class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::trunc) {
        if (!out_) throw TensorError("csv: cannot open '" + path + "' for writing");
    }

    CsvWriter& field(const std::string& v) {
        sep();
        out_ << v;
        return *this;
    }
    CsvWriter& field(const char* v) { return field(std::string(v)); }
    CsvWriter& field(int v) { return field(std::to_string(v)); }
    CsvWriter& field(std::int64_t v) { return field(std::to_string(v)); }
    CsvWriter& field(std::uint64_t v) { return field(std::to_string(v)); }
    CsvWriter& field(double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return field(std::string(buf));
    }

    void end_row() {
        out_ << "\n";
        row_started_ = false;
    }

private:
    std::ofstream out_;
    bool row_started_ = false;

    void sep() {
        if (row_started_) out_ << ",";
        row_started_ = true;
    }
};

inline double parse_csv_double(const std::string& text) { return std::stod(text); }

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

}  // namespace elastron
