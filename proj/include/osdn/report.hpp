#pragma once

#include <string>
#include <vector>

// Deterministic report formatting: numbers print with %.17g so identical
// inputs produce byte-identical payloads.

namespace osdn::report {

std::string format_double(double v);

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row) { rows.push_back(std::move(row)); }
    std::string to_string() const;
};

void write_file(const std::string& path, const std::string& payload);

}  // namespace osdn::report
