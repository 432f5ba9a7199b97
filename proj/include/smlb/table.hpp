#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "smlb/common.hpp"

namespace smlb {

/// Numeric result table with provenance footer lines. Formatting is pinned to
/// "%.17g" so identical runs produce byte-identical CSV.
struct ResultTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    std::vector<std::string> footer; // emitted as trailing "# ..." lines

    int col_index(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return static_cast<int>(i);
        return -1;
    }

    std::vector<double> column(const std::string& name) const {
        const int j = col_index(name);
        if (j < 0) throw std::invalid_argument("ResultTable: no column named " + name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r[static_cast<std::size_t>(j)]);
        return out;
    }

    void add_row(std::vector<double> row) {
        if (row.size() != columns.size())
            throw std::invalid_argument("ResultTable: row width mismatch");
        rows.push_back(std::move(row));
    }

    void write_csv(std::ostream& os) const {
        for (std::size_t j = 0; j < columns.size(); ++j) os << (j ? "," : "") << columns[j];
        os << "\n";
        char buf[64];
        for (const auto& r : rows) {
            for (std::size_t j = 0; j < r.size(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", r[j]);
                os << (j ? "," : "") << buf;
            }
            os << "\n";
        }
        for (const auto& f : footer) os << "# " << f << "\n";
    }
};

/// FNV-1a over the canonical config serialization; recorded in the CSV footer
/// so any output can be traced back to the exact configuration.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace smlb
