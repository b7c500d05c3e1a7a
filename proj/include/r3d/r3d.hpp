#pragma once

#include "r3d/dataio.hpp"
#include "r3d/detect.hpp"
#include "r3d/diffusion.hpp"
#include "r3d/errors.hpp"
#include "r3d/geom.hpp"
#include "r3d/logging.hpp"
#include "r3d/model.hpp"
#include "r3d/parallel.hpp"
#include "r3d/patchgen.hpp"
#include "r3d/rng.hpp"
#include "r3d/train.hpp"
