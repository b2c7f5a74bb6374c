#pragma once

#include <stdexcept>
#include <string>

namespace geoecon {

// Every library failure derives from Error and carries a stable machine code
// (used by the CLI's one-line error output and the REST error body).
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define GEOECON_DEFINE_ERROR(Name, Code)                               \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(Code, message) {} \
  };

GEOECON_DEFINE_ERROR(RangeError, "RANGE")
GEOECON_DEFINE_ERROR(ShapeError, "SHAPE")
GEOECON_DEFINE_ERROR(ContractError, "CONTRACT")
GEOECON_DEFINE_ERROR(ParameterError, "PARAMETER")
GEOECON_DEFINE_ERROR(InvalidPolygonError, "INVALID_POLYGON")
GEOECON_DEFINE_ERROR(OutOfBoundsError, "OUT_OF_BOUNDS")
GEOECON_DEFINE_ERROR(EmptyWindowError, "EMPTY_WINDOW")
GEOECON_DEFINE_ERROR(FormatError, "FORMAT")
GEOECON_DEFINE_ERROR(DecodeError, "DECODE")
GEOECON_DEFINE_ERROR(IoError, "IO")
GEOECON_DEFINE_ERROR(ConstraintError, "CONSTRAINT")
GEOECON_DEFINE_ERROR(RecoveryError, "RECOVERY")
GEOECON_DEFINE_ERROR(NotFoundError, "NOT_FOUND")

#undef GEOECON_DEFINE_ERROR

}  // namespace geoecon
