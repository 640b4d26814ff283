#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmlego {

// Base class for every error raised by the library. Each failure mode gets
// its own type so callers can discriminate without parsing messages.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define MMLEGO_DEFINE_ERROR(Name)                              \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& msg) : Error(msg) {}      \
  }

MMLEGO_DEFINE_ERROR(ShapeMismatchError);
MMLEGO_DEFINE_ERROR(LengthMismatchError);
MMLEGO_DEFINE_ERROR(NonScalarLossError);
MMLEGO_DEFINE_ERROR(NumericError);
MMLEGO_DEFINE_ERROR(EmptyInputError);
MMLEGO_DEFINE_ERROR(EmptyBagError);
MMLEGO_DEFINE_ERROR(ZeroVectorError);
MMLEGO_DEFINE_ERROR(DepthZeroError);
MMLEGO_DEFINE_ERROR(DivergedLossError);
MMLEGO_DEFINE_ERROR(IncompatibleLatentShapeError);
MMLEGO_DEFINE_ERROR(IncompatibleTaskError);
MMLEGO_DEFINE_ERROR(NoModalityAvailableError);
MMLEGO_DEFINE_ERROR(InvalidBinError);
MMLEGO_DEFINE_ERROR(NoComparablePairsError);
MMLEGO_DEFINE_ERROR(SingleClassError);
MMLEGO_DEFINE_ERROR(TooFewSamplesError);
MMLEGO_DEFINE_ERROR(ChecksumMismatchError);
MMLEGO_DEFINE_ERROR(VersionUnsupportedError);
MMLEGO_DEFINE_ERROR(ManifestInconsistentError);
MMLEGO_DEFINE_ERROR(ConfigError);
MMLEGO_DEFINE_ERROR(IoError);

#undef MMLEGO_DEFINE_ERROR

// File-format errors carry the byte offset of the first bad byte.
class MalformedFileError : public Error {
 public:
  MalformedFileError(const std::string& msg, std::size_t byte_offset)
      : Error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}
  std::size_t byte_offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace mmlego
