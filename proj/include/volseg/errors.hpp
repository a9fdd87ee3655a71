#pragma once

#include <stdexcept>
#include <string>

namespace volseg {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define VOLSEG_DEFINE_ERROR(Name)          \
    struct Name : Error {                  \
        using Error::Error;                \
    };

// volio
VOLSEG_DEFINE_ERROR(BadMagic)
VOLSEG_DEFINE_ERROR(TruncatedFile)
VOLSEG_DEFINE_ERROR(DimOverflow)
VOLSEG_DEFINE_ERROR(BadDtypeCode)
VOLSEG_DEFINE_ERROR(InvalidMask)
VOLSEG_DEFINE_ERROR(IoFailure)
VOLSEG_DEFINE_ERROR(WindowOutOfBounds)

// autodiff
VOLSEG_DEFINE_ERROR(ShapeMismatch)
VOLSEG_DEFINE_ERROR(OddDims)
VOLSEG_DEFINE_ERROR(NonScalarRoot)
VOLSEG_DEFINE_ERROR(NonFiniteValue)

// nets
VOLSEG_DEFINE_ERROR(BadDims)
VOLSEG_DEFINE_ERROR(SpecMismatch)

// inference
VOLSEG_DEFINE_ERROR(WindowTooLarge)
VOLSEG_DEFINE_ERROR(UncoveredVoxel)

// training / classify
VOLSEG_DEFINE_ERROR(NoPositives)
VOLSEG_DEFINE_ERROR(FoldTooSmall)

// pose
VOLSEG_DEFINE_ERROR(DegenerateMask)

// metrics
VOLSEG_DEFINE_ERROR(DimMismatch)
VOLSEG_DEFINE_ERROR(LengthMismatch)

// phantom / cli
VOLSEG_DEFINE_ERROR(GeometryFailure)
VOLSEG_DEFINE_ERROR(ConfigError)

#undef VOLSEG_DEFINE_ERROR

}  // namespace volseg
