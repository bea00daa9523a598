#pragma once

#include "pwmsd/core.hpp"
#include "pwmsd/segment.hpp"
#include "pwmsd/converter.hpp"
#include "pwmsd/steady_state.hpp"
#include "pwmsd/small_signal.hpp"
#include "pwmsd/duty_mapping.hpp"
#include "pwmsd/distillation.hpp"
#include "pwmsd/sim_oracle.hpp"
