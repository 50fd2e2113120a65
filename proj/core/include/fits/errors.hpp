#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace fits {

// Base error carrying a machine-readable kind tag (used by the CLI for
// error JSON on stderr).
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

#define FITS_DEFINE_ERROR(Name)                                      \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& msg) : Error(#Name, msg) {}     \
  }

FITS_DEFINE_ERROR(IdNotFound);
FITS_DEFINE_ERROR(DuplicateTriplet);
FITS_DEFINE_ERROR(NotEnoughIrrelevant);
FITS_DEFINE_ERROR(GenerationFailed);
FITS_DEFINE_ERROR(NothingToMask);
FITS_DEFINE_ERROR(NoAlignablePair);
FITS_DEFINE_ERROR(ShapeError);
FITS_DEFINE_ERROR(DegenerateInput);
FITS_DEFINE_ERROR(RankError);
FITS_DEFINE_ERROR(SpanError);
FITS_DEFINE_ERROR(LabelMissing);
FITS_DEFINE_ERROR(NothingToScore);
FITS_DEFINE_ERROR(SequenceTooLong);
FITS_DEFINE_ERROR(CheckpointError);
FITS_DEFINE_ERROR(ConfigError);
FITS_DEFINE_ERROR(EmptyReport);

#undef FITS_DEFINE_ERROR

}  // namespace fits
