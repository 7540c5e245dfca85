#pragma once

#include <stdexcept>
#include <string>

namespace splitfhe {

// Every failure raised by the library derives from Error. kind() is a short
// stable token used by the CLI to build its single-line error output.
class Error : public std::runtime_error {
 public:
  Error(const char* kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  const char* kind() const noexcept { return kind_; }

 private:
  const char* kind_;
};

#define SPLITFHE_DEFINE_ERROR(Name, token)                                  \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(token, what) {}          \
  };

SPLITFHE_DEFINE_ERROR(ParameterError, "parameter")
SPLITFHE_DEFINE_ERROR(CapacityError, "capacity")
SPLITFHE_DEFINE_ERROR(AlignmentError, "alignment")
SPLITFHE_DEFINE_ERROR(DepthError, "depth")
SPLITFHE_DEFINE_ERROR(KeyError, "key")
SPLITFHE_DEFINE_ERROR(FormatError, "format")
SPLITFHE_DEFINE_ERROR(ShapeError, "shape")
SPLITFHE_DEFINE_ERROR(DivergenceError, "divergence")
SPLITFHE_DEFINE_ERROR(ProtocolError, "protocol")
SPLITFHE_DEFINE_ERROR(IoError, "io")
SPLITFHE_DEFINE_ERROR(SplitError, "split")

#undef SPLITFHE_DEFINE_ERROR

}  // namespace splitfhe
