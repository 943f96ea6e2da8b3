#pragma once

#include <stdexcept>
#include <string>

namespace senselda {

/// Failure categories. Each maps onto a process exit code in the CLI.
enum class ErrorKind {
  Config = 1,     // usage / configuration
  Data = 2,       // unreadable, malformed or incompatible input
  Invariant = 3,  // internal invariant violated
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

struct InvariantError : Error {
  explicit InvariantError(const std::string& what) : Error(ErrorKind::Invariant, what) {}
};

}  // namespace senselda
