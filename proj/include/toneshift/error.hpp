#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace toneshift {

enum class ErrorCode {
  malformed_record,
  missing_field,
  dimension_mismatch,
  provider_unavailable,
  provider_mismatch,
  encode_failure,
  cache_corrupt,
  non_finite_activation,
  empty_training_set,
  diverged_loss,
  missing_embedding,
  length_mismatch,
  model_not_loaded,
  empty_request,
  checkpoint_invalid,
  io_failure,
  invalid_argument,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code so the
// CLI and the HTTP layer can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define TONESHIFT_DEFINE_ERROR(Name, Code)                              \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {} \
  };

TONESHIFT_DEFINE_ERROR(MalformedRecord, malformed_record)
TONESHIFT_DEFINE_ERROR(MissingField, missing_field)
TONESHIFT_DEFINE_ERROR(DimensionMismatch, dimension_mismatch)
TONESHIFT_DEFINE_ERROR(ProviderUnavailable, provider_unavailable)
TONESHIFT_DEFINE_ERROR(ProviderMismatch, provider_mismatch)
TONESHIFT_DEFINE_ERROR(EncodeFailure, encode_failure)
TONESHIFT_DEFINE_ERROR(CacheCorrupt, cache_corrupt)
TONESHIFT_DEFINE_ERROR(NonFiniteActivation, non_finite_activation)
TONESHIFT_DEFINE_ERROR(EmptyTrainingSet, empty_training_set)
TONESHIFT_DEFINE_ERROR(DivergedLoss, diverged_loss)
TONESHIFT_DEFINE_ERROR(MissingEmbedding, missing_embedding)
TONESHIFT_DEFINE_ERROR(LengthMismatch, length_mismatch)
TONESHIFT_DEFINE_ERROR(ModelNotLoaded, model_not_loaded)
TONESHIFT_DEFINE_ERROR(EmptyRequest, empty_request)
TONESHIFT_DEFINE_ERROR(CheckpointInvalid, checkpoint_invalid)
TONESHIFT_DEFINE_ERROR(IoFailure, io_failure)
TONESHIFT_DEFINE_ERROR(InvalidArgument, invalid_argument)

#undef TONESHIFT_DEFINE_ERROR

}  // namespace toneshift
