#include "binary_io.hpp"

#include <filesystem>
#include <fstream>

namespace sipfuse::detail {

std::vector<std::byte> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot open '" + path + "'");
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::byte> buf(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("failed reading '" + path + "'");
  return buf;
}

void write_file_atomic(const std::string& path, const std::vector<std::byte>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot create '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace sipfuse::detail
