#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace tightci::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column, or throws ValidationError naming the file.
    std::size_t column(std::string_view name) const;
    bool has_column(std::string_view name) const;
};

/// RFC-4180 reader: quoted fields, doubled quotes, CRLF or LF line endings.
Table parse(std::string_view text, std::string_view origin = "<memory>");
Table read(const std::filesystem::path& path);

/// Quotes a field only when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);
void write_row(std::ostream& os, const std::vector<std::string>& fields);

/// Shortest round-trip decimal form of a double ("nan"/"inf" for non-finite).
std::string format_double(double v);
double parse_double(std::string_view s, std::string_view what);
long long parse_int(std::string_view s, std::string_view what);

}  // namespace tightci::csv
