#pragma once

// Umbrella header for the in-process API (everything except the HTTP service).

#include "binary_io.hpp"
#include "embedding.hpp"
#include "error.hpp"
#include "featurize.hpp"
#include "formats.hpp"
#include "image.hpp"
#include "kmeans.hpp"
#include "labels.hpp"
#include "mask.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "patches.hpp"
#include "prototypes.hpp"
#include "rng.hpp"
#include "segmentation.hpp"
#include "synth.hpp"
#include "version.hpp"
