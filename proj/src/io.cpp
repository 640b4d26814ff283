#include "mmlego/io.hpp"

#include <cstring>
#include <fstream>

namespace mmlego::io {

namespace {

void append_le(std::vector<unsigned char>& out, std::uint64_t v,
               std::size_t bytes) {
  for (std::size_t i = 0; i < bytes; ++i) {
    out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  }
}

}  // namespace

void append_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  append_le(out, v, 2);
}
void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  append_le(out, v, 4);
}
void append_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  append_le(out, v, 8);
}
void append_f64(std::vector<unsigned char>& out, double v) {
  append_le(out, std::bit_cast<std::uint64_t>(v), 8);
}
void append_bytes(std::vector<unsigned char>& out, const void* data,
                  std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  out.insert(out.end(), p, p + size);
}

void ByteReader::require(std::size_t n, const char* what) const {
  if (pos_ + n > bytes_.size()) {
    throw MalformedFileError(std::string("truncated ") + what, pos_);
  }
}

std::uint16_t ByteReader::read_u16(const char* what) {
  require(2, what);
  std::uint16_t v = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    v |= static_cast<std::uint16_t>(bytes_[pos_ + i]) << (8 * i);
  }
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::read_u32(const char* what) {
  require(4, what);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  }
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::read_u64(const char* what) {
  require(8, what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  }
  pos_ += 8;
  return v;
}

double ByteReader::read_f64(const char* what) {
  return std::bit_cast<double>(read_u64(what));
}

std::string ByteReader::read_bytes(std::size_t n, const char* what) {
  require(n, what);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path,
                       const std::vector<unsigned char>& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path,
                       const std::string& text) {
  std::vector<unsigned char> bytes(text.begin(), text.end());
  write_file_atomic(path, bytes);
}

}  // namespace mmlego::io
