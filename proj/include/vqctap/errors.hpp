#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vqctap {

// Every failure raised by the library derives from Error, so callers that do
// not care about the category can catch a single type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define VQCTAP_DEFINE_ERROR(Name)            \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  }

VQCTAP_DEFINE_ERROR(RateError);
VQCTAP_DEFINE_ERROR(LengthError);
VQCTAP_DEFINE_ERROR(ShapeError);
VQCTAP_DEFINE_ERROR(ParameterError);
VQCTAP_DEFINE_ERROR(DomainError);
VQCTAP_DEFINE_ERROR(ConsistencyError);
VQCTAP_DEFINE_ERROR(DegenerateInputError);
VQCTAP_DEFINE_ERROR(IndexError);
VQCTAP_DEFINE_ERROR(StateError);
VQCTAP_DEFINE_ERROR(InputError);
VQCTAP_DEFINE_ERROR(BatchError);
VQCTAP_DEFINE_ERROR(FormatError);
VQCTAP_DEFINE_ERROR(IntegrityError);
VQCTAP_DEFINE_ERROR(FileError);

#undef VQCTAP_DEFINE_ERROR

class DivergenceError : public Error {
 public:
  DivergenceError(int64_t step, const std::string& what)
      : Error("divergence at step " + std::to_string(step) + ": " + what), step_(step) {}
  int64_t step() const noexcept { return step_; }

 private:
  int64_t step_;
};

}  // namespace vqctap
