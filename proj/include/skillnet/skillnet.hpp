#pragma once

#include "skillnet/errors.hpp"
#include "skillnet/rng.hpp"
#include "skillnet/tensor.hpp"
#include "skillnet/tape.hpp"
#include "skillnet/ops.hpp"
#include "skillnet/grad_check.hpp"
#include "skillnet/allocation.hpp"
#include "skillnet/skill_store.hpp"
#include "skillnet/priors.hpp"
#include "skillnet/optim.hpp"
#include "skillnet/baselines.hpp"
#include "skillnet/model.hpp"
#include "skillnet/benchmark.hpp"
#include "skillnet/trainer.hpp"
#include "skillnet/recovery.hpp"
#include "skillnet/hierarchy.hpp"
#include "skillnet/csv.hpp"
#include "skillnet/checkpoint.hpp"
#include "skillnet/config.hpp"
#include "skillnet/experiment.hpp"
