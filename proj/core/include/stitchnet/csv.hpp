#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace stitchnet::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index or -1 when absent.
    int column(const std::string& name) const;
};

/// Plain comma-separated text; no quoting (identifiers never contain commas).
Table read(const std::filesystem::path& path);
void write(const Table& table, const std::filesystem::path& path);

double to_double(const std::string& field, const std::string& context);
/// Shortest representation that round-trips to the same double.
std::string format_double(double value);

} // namespace stitchnet::csv
