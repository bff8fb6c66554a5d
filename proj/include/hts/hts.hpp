#pragma once

// Umbrella header.

#include "hts/aggregator.hpp"
#include "hts/checkpoint.hpp"
#include "hts/classifiers.hpp"
#include "hts/config.hpp"
#include "hts/data.hpp"
#include "hts/encoder.hpp"
#include "hts/error.hpp"
#include "hts/evaluator.hpp"
#include "hts/image.hpp"
#include "hts/io.hpp"
#include "hts/model.hpp"
#include "hts/objectives.hpp"
#include "hts/ops.hpp"
#include "hts/optim.hpp"
#include "hts/params.hpp"
#include "hts/plot.hpp"
#include "hts/pretext.hpp"
#include "hts/report.hpp"
#include "hts/rng.hpp"
#include "hts/tensor.hpp"
#include "hts/trainer.hpp"
#include "hts/tree.hpp"
