#pragma once

// Umbrella header: the full library.

#include "flower/autodiff.hpp"
#include "flower/ball.hpp"
#include "flower/base_trainer.hpp"
#include "flower/config.hpp"
#include "flower/experiment.hpp"
#include "flower/finite_diff.hpp"
#include "flower/model.hpp"
#include "flower/noise.hpp"
#include "flower/pmas.hpp"
#include "flower/protonet.hpp"
#include "flower/rng.hpp"
#include "flower/schedule.hpp"
#include "flower/session.hpp"
#include "flower/stream.hpp"
#include "flower/tensor.hpp"
