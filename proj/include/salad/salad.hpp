// Umbrella header for the SALAD anomaly-detection library.
#pragma once

#include "salad/checkpoint.hpp"
#include "salad/config.hpp"
#include "salad/dataprep.hpp"
#include "salad/eval.hpp"
#include "salad/io.hpp"
#include "salad/losses.hpp"
#include "salad/membank.hpp"
#include "salad/model.hpp"
#include "salad/ndgrad.hpp"
#include "salad/scorer.hpp"
#include "salad/trainer.hpp"
