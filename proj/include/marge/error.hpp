#pragma once

#include <stdexcept>
#include <string>

namespace marge {

enum class ErrorCode {
  kInvalidArgument = 1,
  kBoundExceeded,
  kConfig,
  kIo,
  kNumeric,
  kAssertion,
};

/// Single exception type for the library; the code selects the C ABI status
/// and the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::kInvalidArgument, what);
}

}  // namespace marge
