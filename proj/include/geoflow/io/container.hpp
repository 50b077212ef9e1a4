#pragma once

#include "geoflow/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace geoflow::io {

/// Binary archive: the magic line "GEOFLOW-CONTAINER v1\n", an 8-byte little-endian
/// header length, a UTF-8 JSON header, then each array's doubles as little-endian
/// IEEE-754 binary64 in the order the header lists them. The header's "arrays" entry
/// holds {name, rows, cols} records (column-major payload); everything else in it is
/// free-form metadata. No timestamps are written, so equal inputs give equal bytes.
struct Container {
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Matrix> arrays;

  void put(const std::string& name, const Matrix& m) { arrays[name] = m; }
  const Matrix& get(const std::string& name) const;
  bool has(const std::string& name) const { return arrays.count(name) > 0; }
};

void save_container(const Container& c, const std::filesystem::path& path);
Container load_container(const std::filesystem::path& path);

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace geoflow::io
