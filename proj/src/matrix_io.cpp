// SPDX-License-Identifier: Apache-2.0

#include "icvl/matrix_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "icvl/error.hpp"

namespace icvl {

namespace {

constexpr char kMagic[4] = {'I', 'C', 'V', 'L'};
constexpr std::size_t kHeaderSize = 4 + 4 + 1 + 8 + 8;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t offset) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(in[offset + i]) << (8 * i);
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

}  // namespace

std::vector<std::uint8_t> encode_matrix(const Matrix& m, DType dtype) {
  std::vector<std::uint8_t> out;
  const std::size_t width = dtype == DType::kF64 ? 8 : 4;
  out.reserve(kHeaderSize + m.size() * width);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kIcvlMatVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  put_le<std::uint64_t>(out, m.rows());
  put_le<std::uint64_t>(out, m.dims());
  for (double v : m.data()) {
    if (dtype == DType::kF64) {
      put_le<double>(out, v);
    } else {
      put_le<float>(out, static_cast<float>(v));
    }
  }
  return out;
}

Matrix decode_matrix(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
  if (bytes.size() < offset + kHeaderSize) throw IoError("icvlmat: truncated header");
  if (std::memcmp(bytes.data() + offset, kMagic, 4) != 0) throw IoError("icvlmat: bad magic");
  const auto version = get_le<std::uint32_t>(bytes, offset + 4);
  if (version != kIcvlMatVersion) {
    throw IoError("icvlmat: unsupported version " + std::to_string(version));
  }
  const std::uint8_t code = bytes[offset + 8];
  if (code > 1) throw IoError("icvlmat: unknown dtype code " + std::to_string(code));
  const auto rows = get_le<std::uint64_t>(bytes, offset + 9);
  const auto dims = get_le<std::uint64_t>(bytes, offset + 17);
  const std::size_t width = code == 0 ? 8 : 4;
  if (dims != 0 && rows > (bytes.size() / width) / dims) throw IoError("icvlmat: truncated payload");
  const std::size_t count = static_cast<std::size_t>(rows * dims);
  std::size_t pos = offset + kHeaderSize;
  if (bytes.size() < pos + count * width) throw IoError("icvlmat: truncated payload");
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i, pos += width) {
    data[i] = code == 0 ? get_le<double>(bytes, pos) : static_cast<double>(get_le<float>(bytes, pos));
  }
  offset = pos;
  return Matrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(dims), std::move(data));
}

Matrix decode_matrix(const std::vector<std::uint8_t>& bytes) {
  std::size_t offset = 0;
  Matrix m = decode_matrix(bytes, offset);
  if (offset != bytes.size()) throw IoError("icvlmat: trailing bytes");
  return m;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_matrix(const std::filesystem::path& path, const Matrix& m, DType dtype) {
  write_file_bytes(path, encode_matrix(m, dtype));
}

Matrix read_matrix(const std::filesystem::path& path) { return decode_matrix(read_file_bytes(path)); }

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ostringstream header;
  header << "ICVLCKPT 1\n";
  header << "seed " << ckpt.seed << "\n";
  for (const auto& [key, value] : ckpt.meta) {
    if (key.find_first_of(" \n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw IoError("checkpoint meta entries must be single-line, key without spaces");
    }
    header << "meta " << key << " " << value << "\n";
  }
  for (const auto& [name, m] : ckpt.tensors) {
    if (name.find_first_of(" \n") != std::string::npos) throw IoError("bad tensor name: " + name);
    header << "tensor " << name << " " << m.rows() << " " << m.dims() << "\n";
  }
  header << "end\n";
  const std::string text = header.str();
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  for (const auto& [name, m] : ckpt.tensors) {
    auto blob = encode_matrix(m);
    bytes.insert(bytes.end(), blob.begin(), blob.end());
  }
  write_file_bytes(path, bytes);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  Checkpoint ckpt;
  std::size_t pos = 0;
  auto next_line = [&]() {
    std::string line;
    while (pos < bytes.size() && bytes[pos] != '\n') line.push_back(static_cast<char>(bytes[pos++]));
    if (pos >= bytes.size()) throw IoError("checkpoint: truncated manifest in " + path.string());
    ++pos;
    return line;
  };
  if (next_line() != "ICVLCKPT 1") throw IoError("checkpoint: bad header in " + path.string());
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> order;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "seed") {
      is >> ckpt.seed;
    } else if (tag == "meta") {
      std::string key;
      is >> key;
      std::string value;
      std::getline(is, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (tag == "tensor") {
      std::string name;
      std::size_t rows = 0;
      std::size_t dims = 0;
      is >> name >> rows >> dims;
      order.emplace_back(name, rows, dims);
    } else {
      throw IoError("checkpoint: unknown manifest line '" + line + "'");
    }
  }
  for (const auto& [name, rows, dims] : order) {
    Matrix m = decode_matrix(bytes, pos);
    if (m.rows() != rows || m.dims() != dims) throw IoError("checkpoint: tensor " + name + " shape differs from manifest");
    ckpt.tensors.emplace(name, std::move(m));
  }
  if (pos != bytes.size()) throw IoError("checkpoint: trailing bytes in " + path.string());
  return ckpt;
}

}  // namespace icvl
