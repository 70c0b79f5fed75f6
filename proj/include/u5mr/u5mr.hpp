#pragma once

#include "u5mr/numeric.hpp"
#include "u5mr/core.hpp"
#include "u5mr/calendar.hpp"
#include "u5mr/simulator.hpp"
#include "u5mr/augmentation.hpp"
#include "u5mr/posterior.hpp"
#include "u5mr/hmc.hpp"
#include "u5mr/gibbs.hpp"
#include "u5mr/brass.hpp"
#include "u5mr/direct.hpp"
#include "u5mr/evaluate.hpp"
#include "u5mr/io.hpp"
#include "u5mr/pipeline.hpp"
