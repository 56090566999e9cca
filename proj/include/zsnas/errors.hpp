#pragma once

#include <stdexcept>
#include <string>

namespace zsnas {

// Bad flags, malformed encodings, shape mismatches. The CLI maps this to
// exit code 2.
class config_error : public std::invalid_argument {
 public:
  explicit config_error(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite values where finiteness is required. Exit code 3 at the CLI;
// proxy scoring catches it per architecture and records FLOOR instead.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace zsnas
