#pragma once

#include "gcrl/core.hpp"
#include "gcrl/mlp.hpp"
#include "gcrl/env.hpp"
#include "gcrl/dataset.hpp"
#include "gcrl/attacks.hpp"
#include "gcrl/simsr.hpp"
#include "gcrl/agents.hpp"
#include "gcrl/arts.hpp"
#include "gcrl/bench.hpp"
#include "gcrl/config.hpp"
