#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace m2p {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class EmptyMask : public Error {
 public:
  EmptyMask() : Error("mask has no foreground pixel") {}
};

class OutOfBounds : public Error {
 public:
  using Error::Error;
};

class ZeroNormFeature : public Error {
 public:
  using Error::Error;
};

class GroupTooSmall : public Error {
 public:
  using Error::Error;
};

class NoValidGroup : public Error {
 public:
  NoValidGroup() : Error("every query group was skipped") {}
};

class BadDims : public Error {
 public:
  using Error::Error;
};

class BadConfig : public Error {
 public:
  using Error::Error;
};

class DimMismatch : public Error {
 public:
  using Error::Error;
};

class MismatchedTracks : public Error {
 public:
  using Error::Error;
};

class NoForeground : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `offset` is the byte position where parsing
/// failed (for line-oriented formats, the offset of the offending line).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace m2p
