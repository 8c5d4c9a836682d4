#pragma once

#include "mkv/errors.hpp"
#include "mkv/theta.hpp"
#include "mkv/rng.hpp"
#include "mkv/models.hpp"
#include "mkv/simulate.hpp"
#include "mkv/parallel.hpp"
#include "mkv/stats.hpp"
#include "mkv/offline.hpp"
#include "mkv/online.hpp"
#include "mkv/surface.hpp"
#include "mkv/io.hpp"
#include "mkv/harness.hpp"
