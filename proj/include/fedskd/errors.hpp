#pragma once

#include <stdexcept>
#include <string>

namespace fedskd {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define FEDSKD_DEFINE_ERROR(Name)              \
    class Name : public Error {                \
    public:                                    \
        using Error::Error;                    \
    }

// skd_core
FEDSKD_DEFINE_ERROR(ZeroRowError);
FEDSKD_DEFINE_ERROR(NonFiniteError);
FEDSKD_DEFINE_ERROR(ShapeRankError);
FEDSKD_DEFINE_ERROR(EmptyRegionError);
FEDSKD_DEFINE_ERROR(MismatchError);
FEDSKD_DEFINE_ERROR(MissingMasksError);

// model_zoo
FEDSKD_DEFINE_ERROR(UnsupportedShapeError);
FEDSKD_DEFINE_ERROR(WidthUnderflowError);
FEDSKD_DEFINE_ERROR(CheckpointError);

// data_lab
FEDSKD_DEFINE_ERROR(EmptyClientError);
FEDSKD_DEFINE_ERROR(UnknownSiteError);
FEDSKD_DEFINE_ERROR(DatasetError);

// fed_protocol
FEDSKD_DEFINE_ERROR(NonFiniteLossError);

// baselines
FEDSKD_DEFINE_ERROR(SchemaMismatchError);

// eval_metrics
FEDSKD_DEFINE_ERROR(SingleClassError);
FEDSKD_DEFINE_ERROR(MissingAttrError);

// runner_cli
FEDSKD_DEFINE_ERROR(ConfigError);

#undef FEDSKD_DEFINE_ERROR

}  // namespace fedskd
