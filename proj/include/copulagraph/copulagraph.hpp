#pragma once

#include "copulagraph/autodiff.hpp"
#include "copulagraph/copula.hpp"
#include "copulagraph/dataset.hpp"
#include "copulagraph/errors.hpp"
#include "copulagraph/experiments.hpp"
#include "copulagraph/graph.hpp"
#include "copulagraph/io.hpp"
#include "copulagraph/marginals.hpp"
#include "copulagraph/nets.hpp"
#include "copulagraph/normal.hpp"
#include "copulagraph/synthgen.hpp"
#include "copulagraph/trainer.hpp"
