#pragma once

#include <stdexcept>
#include <string>

namespace dlsh {

/// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DLSH_DEFINE_ERROR(Name)                  \
  class Name : public Error {                    \
   public:                                       \
    explicit Name(const std::string& what)       \
        : Error(std::string(#Name ": ") + what) {} \
  };

// trace_model
DLSH_DEFINE_ERROR(MalformedReport)
DLSH_DEFINE_ERROR(MalformedFrame)
DLSH_DEFINE_ERROR(DuplicateId)
DLSH_DEFINE_ERROR(EmptyCorpus)
// lsh_core / hashers
DLSH_DEFINE_ERROR(DomainError)
DLSH_DEFINE_ERROR(ShapeMismatch)
DLSH_DEFINE_ERROR(ParamMismatch)
DLSH_DEFINE_ERROR(FamilyMismatch)
DLSH_DEFINE_ERROR(EmptyTokenSet)
DLSH_DEFINE_ERROR(ZeroVector)
DLSH_DEFINE_ERROR(FormatError)
// deep_encoder
DLSH_DEFINE_ERROR(EmptyBatch)
DLSH_DEFINE_ERROR(InsufficientCorpus)
// evaluation
DLSH_DEFINE_ERROR(NoEligibleQueries)
DLSH_DEFINE_ERROR(LengthMismatch)
DLSH_DEFINE_ERROR(AllCombinationsExcluded)

#undef DLSH_DEFINE_ERROR

}  // namespace dlsh
