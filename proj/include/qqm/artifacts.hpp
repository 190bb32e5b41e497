#pragma once

// CSV text, atomic file writes and content hashes for run artifacts.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace qqm {

/// Shortest decimal string that reads back to the same double; "nan", "inf", "-inf"
/// for non-finite values.
std::string format_double(double x);

using CsvCell = std::variant<double, std::int64_t, std::string>;

/// In-memory CSV table with a fixed header. Strings containing a comma, quote or
/// newline are quoted.
class Csv {
public:
    explicit Csv(std::vector<std::string> columns);

    void row(const std::vector<CsvCell>& cells);
    std::size_t rows() const { return rows_; }
    const std::vector<std::string>& columns() const { return columns_; }
    const std::string& str() const { return text_; }

private:
    std::vector<std::string> columns_;
    std::string text_;
    std::size_t rows_ = 0;
};

/// Write to `path.tmp` and rename over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

std::string sha1_hex(std::string_view data);
/// Hash of the git blob object for `data`, "blob <size>\0<data>".
std::string git_blob_sha1(std::string_view data);

} // namespace qqm
