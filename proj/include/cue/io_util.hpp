#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cue {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a half-written file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// RFC-4180 CSV builder: comma separated, CRLF line endings, fields quoted only
/// when they contain a comma, quote, CR or LF.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);

    CsvWriter& field(std::string_view value);
    CsvWriter& field(double value);
    CsvWriter& field(std::uint64_t value);
    CsvWriter& field(int value) { return field(static_cast<double>(value)); }
    CsvWriter& field(bool value) { return field(std::string_view(value ? "true" : "false")); }
    void end_row();

    std::size_t columns() const noexcept { return columns_; }
    const std::string& str() const noexcept { return out_; }

private:
    void separator();

    std::string out_;
    std::size_t columns_;
    std::size_t in_row_ = 0;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// Minimal RFC-4180 reader (quoted fields, CRLF or LF endings).
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

} // namespace cue
