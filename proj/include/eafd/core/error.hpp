#pragma once

#include <stdexcept>
#include <string>

namespace eafd {

// Maps directly onto CLI exit codes.
enum class ErrorKind {
  Config = 2,
  Data = 3,
  GeneratorUnreachable = 4,
  Invariant = 5,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_config(const std::string& msg) { throw Error(ErrorKind::Config, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(ErrorKind::Data, msg); }
[[noreturn]] inline void throw_invariant(const std::string& msg) { throw Error(ErrorKind::Invariant, msg); }

}  // namespace eafd
