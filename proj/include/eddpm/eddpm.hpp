#pragma once

#include "batch.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "fitness_table.hpp"
#include "nets.hpp"
#include "objective.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "synthdata.hpp"
#include "tasks.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
