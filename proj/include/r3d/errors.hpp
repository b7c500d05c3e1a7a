#pragma once

#include <stdexcept>
#include <string>

namespace r3d {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// geom
struct DegenerateCloud : Error { using Error::Error; };
struct KTooLarge : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };

// patchgen
struct SelectionTooLarge : Error { using Error::Error; };

// diffusion / model
struct ShapeMismatch : Error { using Error::Error; };
struct InvalidSchedule : Error { using Error::Error; };
struct NoiseAtFinalStep : Error { using Error::Error; };
struct InvalidWidths : Error { using Error::Error; };
struct EmptyBatch : Error { using Error::Error; };

// train
struct EmptyPool : Error { using Error::Error; };
struct Divergence : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };

// detect
struct PointCountMismatch : Error { using Error::Error; };
struct SingleClass : Error { using Error::Error; };
struct MissingPointLabels : Error { using Error::Error; };

// dataio
struct ParseError : Error { using Error::Error; };
struct UnsupportedFormat : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };

// cli
struct ConfigError : Error { using Error::Error; };

}  // namespace r3d
