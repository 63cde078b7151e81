#pragma once

// Convenience umbrella for the whole library.

#include "c2kd/data.hpp"
#include "c2kd/distill.hpp"
#include "c2kd/errors.hpp"
#include "c2kd/eval.hpp"
#include "c2kd/experiment.hpp"
#include "c2kd/kernel.hpp"
#include "c2kd/model.hpp"
#include "c2kd/objectives.hpp"
#include "c2kd/rng.hpp"
#include "c2kd/tensor.hpp"
#include "c2kd/train.hpp"
#include "c2kd/verify.hpp"
