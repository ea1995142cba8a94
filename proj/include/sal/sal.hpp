#pragma once

// Umbrella header.
#include "sal/augment.hpp"
#include "sal/config.hpp"
#include "sal/evaluation.hpp"
#include "sal/losses.hpp"
#include "sal/model.hpp"
#include "sal/nn.hpp"
#include "sal/optim.hpp"
#include "sal/pairing.hpp"
#include "sal/phantom.hpp"
#include "sal/rng.hpp"
#include "sal/tensor.hpp"
#include "sal/training.hpp"
#include "sal/volume.hpp"
