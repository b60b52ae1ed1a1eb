#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace icl {

using CsvValue = std::variant<std::int64_t, std::uint64_t, double, std::string>;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<CsvValue>> rows;

  void add_row(std::vector<CsvValue> row);
};

/// %.17g, which re-parses to the identical float64.
std::string format_double(double v);

/// Header plus rows, LF line endings, fields quoted only when needed.
std::string to_csv(const CsvTable& table);

/// Writes to_csv(table) to `path`, creating parent directories. Throws
/// ValidationError when the file cannot be written.
void write_csv(const CsvTable& table, const std::filesystem::path& path);

}  // namespace icl
