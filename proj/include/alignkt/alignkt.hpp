#pragma once

#include "alignkt/attention.hpp"
#include "alignkt/config.hpp"
#include "alignkt/dataio.hpp"
#include "alignkt/embed.hpp"
#include "alignkt/losses.hpp"
#include "alignkt/metrics.hpp"
#include "alignkt/model.hpp"
#include "alignkt/numcore/adam.hpp"
#include "alignkt/numcore/checkpoint.hpp"
#include "alignkt/numcore/grad_check.hpp"
#include "alignkt/numcore/ops.hpp"
#include "alignkt/synth.hpp"
#include "alignkt/trainer.hpp"
