#pragma once

#include <stdexcept>
#include <string>

namespace cbam {

// Base for every error the library raises. Validation errors describe bad
// input (shapes, files, configs); numerical errors describe a computation
// that went off the rails. The CLI maps them to exit codes 1 and 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

#define CBAM_DEFINE_ERROR(Name, Base)                                  \
  class Name : public Base {                                           \
   public:                                                             \
    explicit Name(const std::string& what) : Base(#Name ": " + what) {} \
  };

CBAM_DEFINE_ERROR(ShapeMismatch, ValidationError)
CBAM_DEFINE_ERROR(InvalidKernel, ValidationError)
CBAM_DEFINE_ERROR(NotScalar, ValidationError)
CBAM_DEFINE_ERROR(NodeNotOnTape, ValidationError)
CBAM_DEFINE_ERROR(BadMagic, ValidationError)
CBAM_DEFINE_ERROR(TruncatedFile, ValidationError)
CBAM_DEFINE_ERROR(LabelOutOfRange, ValidationError)
CBAM_DEFINE_ERROR(ClassOutOfRange, ValidationError)
CBAM_DEFINE_ERROR(ConfigError, ValidationError)
CBAM_DEFINE_ERROR(IoFailure, ValidationError)
CBAM_DEFINE_ERROR(DivergenceDetected, NumericalError)
CBAM_DEFINE_ERROR(GradientCheckFailed, NumericalError)

#undef CBAM_DEFINE_ERROR

}  // namespace cbam
