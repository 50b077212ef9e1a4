#include "geoflow/io/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace geoflow::io {

namespace {

constexpr char kMagic[] = "GEOFLOW-CONTAINER v1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

const Matrix& Container::get(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw IoError("container has no array named '" + name + "'");
  return it->second;
}

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void save_container(const Container& c, const std::filesystem::path& path) {
  nlohmann::json header = c.metadata;
  header["arrays"] = nlohmann::json::array();
  for (const auto& [name, m] : c.arrays)
    header["arrays"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  const std::string text = header.dump();
  std::string out(kMagic, kMagicLen);
  put_u64(out, text.size());
  out += text;
  for (const auto& [name, m] : c.arrays) {
    for (Index i = 0; i < m.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(m.data()[i]));
  }
  write_atomic(path, out);
}

Container load_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string in = ss.str();
  if (in.size() < kMagicLen + 8 || in.compare(0, kMagicLen, kMagic) != 0)
    throw IoError(path.string() + " is not a geoflow container");
  const std::uint64_t len = get_u64(in, kMagicLen);
  std::size_t at = kMagicLen + 8;
  if (in.size() < at + len) throw IoError(path.string() + " is truncated (header)");
  Container c;
  try {
    c.metadata = nlohmann::json::parse(in.substr(at, len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad header: " + e.what());
  }
  at += len;
  const nlohmann::json arrays = c.metadata.at("arrays");
  c.metadata.erase("arrays");
  for (const auto& a : arrays) {
    const auto rows = a.at("rows").get<Index>(), cols = a.at("cols").get<Index>();
    Matrix m(rows, cols);
    if (in.size() < at + 8 * static_cast<std::size_t>(m.size()))
      throw IoError(path.string() + " is truncated (array " + a.at("name").get<std::string>() + ")");
    for (Index i = 0; i < m.size(); ++i, at += 8) m.data()[i] = std::bit_cast<double>(get_u64(in, at));
    c.arrays[a.at("name").get<std::string>()] = std::move(m);
  }
  if (at != in.size()) throw IoError(path.string() + " has trailing bytes");
  return c;
}

}  // namespace geoflow::io
