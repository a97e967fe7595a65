#pragma once

#include "autodiff.hpp"
#include "config.hpp"
#include "data.hpp"
#include "harness.hpp"
#include "image_io.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "persist.hpp"
#include "rng.hpp"
#include "scoring.hpp"
#include "tensor.hpp"
#include "viz.hpp"
