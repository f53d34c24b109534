#ifndef DISTILLERY_ERRORS_HPP_
#define DISTILLERY_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace distillery {

// Broad failure classes. The CLI maps each to a process exit code.
enum class ErrorKind {
  kUsage,        // API misuse: step after done, stale cache, bad flags
  kConfig,       // shape mismatch, invalid or unknown configuration
  kDomain,       // argument outside the mathematical domain
  kNumeric,      // NaN/Inf produced or consumed
  kIo,           // file system failure
  kFormat,       // malformed, truncated or corrupted file
  kUnsupported,  // operation not defined for this input
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace distillery

#endif  // DISTILLERY_ERRORS_HPP_
