#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vitalloc {

enum class ErrorCode {
  kInvalidInput,
  kParse,
  kSchema,
  kDegenerateRange,
  kInsufficientData,
  kDegenerateFit,
  kDegenerateModel,
  kInfeasible,
  kContractViolation,
  kNumericFailure,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; `code()` distinguishes the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

}  // namespace vitalloc
