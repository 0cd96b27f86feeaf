#pragma once

// Umbrella header: the whole library in one include.

#include "tucka/adapter.hpp"
#include "tucka/errors.hpp"
#include "tucka/householder.hpp"
#include "tucka/rng.hpp"
#include "tucka/routing.hpp"
#include "tucka/serialize.hpp"
#include "tucka/sim.hpp"
#include "tucka/tensor.hpp"
#include "tucka/tensor_ops.hpp"
#include "tucka/trainer.hpp"
