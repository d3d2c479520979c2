#pragma once

// Umbrella header for the whole library.

#include "dpts/backend.hpp"
#include "dpts/baselines.hpp"
#include "dpts/bench.hpp"
#include "dpts/cli.hpp"
#include "dpts/config_file.hpp"
#include "dpts/core.hpp"
#include "dpts/errors.hpp"
#include "dpts/http_backend.hpp"
#include "dpts/metrics.hpp"
#include "dpts/mix.hpp"
#include "dpts/scheduler.hpp"
#include "dpts/streamline.hpp"
#include "dpts/trace.hpp"
