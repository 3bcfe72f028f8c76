#pragma once

#include <stdexcept>
#include <string>

namespace tbe {

// Root of every error the library throws. Callers that only care about
// "something in the pipeline failed" catch this.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

#define TBE_DECLARE_ERROR(Name)                                                \
    class Name : public Error {                                                \
      public:                                                                  \
        using Error::Error;                                                    \
    }

TBE_DECLARE_ERROR(DimensionError);
TBE_DECLARE_ERROR(ParameterError);
TBE_DECLARE_ERROR(DegenerateCropError);
TBE_DECLARE_ERROR(NormalizationError);
TBE_DECLARE_ERROR(NonFiniteError);
TBE_DECLARE_ERROR(GraphError);
TBE_DECLARE_ERROR(ConfigError);
TBE_DECLARE_ERROR(IoError);
TBE_DECLARE_ERROR(ManifestError);
TBE_DECLARE_ERROR(MiningError);
TBE_DECLARE_ERROR(DegenerateMeanError);
TBE_DECLARE_ERROR(CompositionError);
TBE_DECLARE_ERROR(TrainingError);
TBE_DECLARE_ERROR(MetricError);
TBE_DECLARE_ERROR(SimilarityError);

#undef TBE_DECLARE_ERROR

}  // namespace tbe
