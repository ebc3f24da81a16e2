#pragma once

#include "mcl/errors.hpp"
#include "mcl/random.hpp"
#include "mcl/nn.hpp"
#include "mcl/optim.hpp"
#include "mcl/replay.hpp"
#include "mcl/methods.hpp"
#include "mcl/data.hpp"
#include "mcl/stream.hpp"
#include "mcl/eval.hpp"
#include "mcl/config.hpp"
#include "mcl/harness.hpp"
#include "mcl/report.hpp"
