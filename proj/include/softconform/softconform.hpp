#pragma once

#include "softconform/checker.hpp"
#include "softconform/csv.hpp"
#include "softconform/errors.hpp"
#include "softconform/evaluation.hpp"
#include "softconform/event_log.hpp"
#include "softconform/log_io.hpp"
#include "softconform/model.hpp"
#include "softconform/rng.hpp"
#include "softconform/stream.hpp"
