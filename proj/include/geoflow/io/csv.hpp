#pragma once

#include "geoflow/common.hpp"

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace geoflow::io {

using CsvCell = std::variant<double, long long, std::string>;
using CsvRow = std::vector<CsvCell>;

/// Header row plus data rows. Doubles are printed with 17 significant digits so a
/// file round-trips exactly and is byte-stable across runs.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(CsvRow row);
  std::size_t size() const { return rows_.size(); }
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<CsvRow> rows_;
};

std::string format_double(double v);

/// Matrix with axis headers: first row "label,<col values>", then "<row value>,<cells>".
void write_grid_csv(const std::filesystem::path& path, const std::string& corner, const Vector& row_axis,
                    const Vector& col_axis, const Matrix& values);

}  // namespace geoflow::io
