#include "stitchnet/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "stitchnet/errors.hpp"

namespace stitchnet::csv {

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

} // namespace

int Table::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

Table read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
    Table t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split(line);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size())
            throw DataError(fmt::format("{}:{}: expected {} fields, got {}", path.string(), line_no, t.header.size(),
                                        fields.size()));
        t.rows.push_back(std::move(fields));
    }
    if (t.header.empty()) throw DataError(fmt::format("{}: empty CSV", path.string()));
    return t;
}

void write(const Table& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
    out << fmt::format("{}\n", fmt::join(table.header, ","));
    for (const auto& row : table.rows) out << fmt::format("{}\n", fmt::join(row, ","));
}

double to_double(const std::string& field, const std::string& context) {
    double value = 0;
    const auto* first = field.data();
    const auto* last = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) throw DataError(fmt::format("{}: '{}' is not a number", context, field));
    return value;
}

std::string format_double(double value) { return fmt::format("{}", value); }

} // namespace stitchnet::csv
