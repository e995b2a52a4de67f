#pragma once

// Umbrella header.

#include "activations.hpp"
#include "data.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "experiment.hpp"
#include "metrics.hpp"
#include "model_io.hpp"
#include "nn.hpp"
#include "presets.hpp"
#include "rng.hpp"
#include "tensor.hpp"
