#pragma once

// Umbrella header for the full engine.

#include "mtda/checkpoint.hpp"
#include "mtda/config.hpp"
#include "mtda/data.hpp"
#include "mtda/errors.hpp"
#include "mtda/gradcheck.hpp"
#include "mtda/gradsuite.hpp"
#include "mtda/losses.hpp"
#include "mtda/manifest.hpp"
#include "mtda/metrics.hpp"
#include "mtda/model.hpp"
#include "mtda/rng.hpp"
#include "mtda/tensor.hpp"
#include "mtda/training.hpp"
