#include "geoflow/io/csv.hpp"
#include "geoflow/io/container.hpp"

#include <charconv>
#include <sstream>

namespace geoflow::io {

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace {

std::string cell_text(const CsvCell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  const auto& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

}  // namespace

void CsvTable::add(CsvRow row) {
  if (row.size() != header_.size()) throw std::invalid_argument("CSV row width does not match header");
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string out;
  for (std::size_t i = 0; i < header_.size(); ++i) out += (i ? "," : "") + cell_text(header_[i]);
  out += '\n';
  for (const auto& r : rows_) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out += ',';
      out += cell_text(r[i]);
    }
    out += '\n';
  }
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const { write_atomic(path, str()); }

void write_grid_csv(const std::filesystem::path& path, const std::string& corner, const Vector& row_axis,
                    const Vector& col_axis, const Matrix& values) {
  if (values.rows() != row_axis.size() || values.cols() != col_axis.size())
    throw std::invalid_argument("grid values do not match axis lengths");
  std::string out = corner;
  for (Index j = 0; j < col_axis.size(); ++j) out += "," + format_double(col_axis[j]);
  out += '\n';
  for (Index i = 0; i < row_axis.size(); ++i) {
    out += format_double(row_axis[i]);
    for (Index j = 0; j < col_axis.size(); ++j) out += "," + format_double(values(i, j));
    out += '\n';
  }
  write_atomic(path, out);
}

}  // namespace geoflow::io
