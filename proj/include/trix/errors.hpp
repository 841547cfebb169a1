#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace trix {

/// Root of every exception thrown by the library.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input. Carries the 1-based line number.
class parse_error : public error {
 public:
  parse_error(const std::string& file, std::size_t line, const std::string& what)
      : error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class config_error : public error {
 public:
  using error::error;
};

/// A query or triple names a token the target vocabulary does not contain.
class vocabulary_error : public error {
 public:
  vocabulary_error(const std::string& token, const std::string& what)
      : error(what + ": '" + token + "'"), token_(token) {}

  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

class validation_error : public error {
 public:
  using error::error;
};

class shape_error : public error {
 public:
  using error::error;
};

class bounds_error : public error {
 public:
  using error::error;
};

/// Binary checkpoint decoding failure. Carries the byte offset.
class format_error : public error {
 public:
  format_error(std::uint64_t offset, const std::string& what)
      : error("offset " + std::to_string(offset) + ": " + what), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Training produced a non-finite loss.
class numeric_error : public error {
 public:
  using error::error;
};

}  // namespace trix
