#pragma once

#include "segflow/density.hpp"
#include "segflow/config.hpp"
#include "segflow/diagnostics.hpp"
#include "segflow/errors.hpp"
#include "segflow/experiment.hpp"
#include "segflow/fields.hpp"
#include "segflow/mlp.hpp"
#include "segflow/schedule.hpp"
#include "segflow/segment.hpp"
#include "segflow/trajectory.hpp"
#include "segflow/transport.hpp"
