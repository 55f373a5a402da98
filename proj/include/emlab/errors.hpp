#pragma once

#include <stdexcept>
#include <string>

namespace emlab {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define EMLAB_DEFINE_ERROR(Name)        \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

EMLAB_DEFINE_ERROR(MetaMismatch);
EMLAB_DEFINE_ERROR(NotSorted);
EMLAB_DEFINE_ERROR(FormatError);
EMLAB_DEFINE_ERROR(ConfigError);
EMLAB_DEFINE_ERROR(DegenerateNormalization);
EMLAB_DEFINE_ERROR(Underdetermined);
EMLAB_DEFINE_ERROR(EmptyData);
EMLAB_DEFINE_ERROR(NoPeak);
EMLAB_DEFINE_ERROR(OutOfBounds);
EMLAB_DEFINE_ERROR(EmptySelection);
EMLAB_DEFINE_ERROR(DegenerateMean);
EMLAB_DEFINE_ERROR(DomainError);
EMLAB_DEFINE_ERROR(GridError);

#undef EMLAB_DEFINE_ERROR

/// Raised when a Franck-Condon progression is cut off before enough
/// probability mass is collected.
class TruncationError : public Error {
 public:
  TruncationError(const std::string& what, double achieved_mass)
      : Error(what), achieved_mass_(achieved_mass) {}
  double achieved_mass() const noexcept { return achieved_mass_; }

 private:
  double achieved_mass_;
};

}  // namespace emlab
