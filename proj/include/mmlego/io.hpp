#pragma once

// Byte-level file helpers shared by the dataset and checkpoint containers.
// All multi-byte fields are little-endian regardless of host order.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmlego/errors.hpp"

namespace mmlego::io {

void append_u16(std::vector<unsigned char>& out, std::uint16_t v);
void append_u32(std::vector<unsigned char>& out, std::uint32_t v);
void append_u64(std::vector<unsigned char>& out, std::uint64_t v);
void append_f64(std::vector<unsigned char>& out, double v);
void append_bytes(std::vector<unsigned char>& out, const void* data,
                  std::size_t size);

// Cursor-based reader that raises MalformedFileError with the offset of the
// field that could not be read.
class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> bytes)
      : bytes_(std::move(bytes)) {}

  std::size_t offset() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }
  bool exhausted() const { return pos_ == bytes_.size(); }

  std::uint16_t read_u16(const char* what);
  std::uint32_t read_u32(const char* what);
  std::uint64_t read_u64(const char* what);
  double read_f64(const char* what);
  std::string read_bytes(std::size_t n, const char* what);

 private:
  void require(std::size_t n, const char* what) const;
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path);
// Writes through a temporary file in the same directory and renames it into
// place, so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path,
                       const std::vector<unsigned char>& bytes);
void write_text_atomic(const std::filesystem::path& path,
                       const std::string& text);

}  // namespace mmlego::io
