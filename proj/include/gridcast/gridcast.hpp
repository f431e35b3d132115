#pragma once

#include "baselines.hpp"
#include "error.hpp"
#include "features.hpp"
#include "geo_grid.hpp"
#include "geojson.hpp"
#include "ingest.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "models.hpp"
#include "nn.hpp"
#include "pipeline.hpp"
#include "rng.hpp"
#include "sequence.hpp"
#include "synth.hpp"
#include "tensor.hpp"
#include "training.hpp"
