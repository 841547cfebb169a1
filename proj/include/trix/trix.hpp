#pragma once

#include "trix/autodiff.hpp"
#include "trix/checkpoint.hpp"
#include "trix/color_refinement.hpp"
#include "trix/config.hpp"
#include "trix/counterexample.hpp"
#include "trix/errors.hpp"
#include "trix/eval.hpp"
#include "trix/dataset.hpp"
#include "trix/expressivity.hpp"
#include "trix/gradcheck.hpp"
#include "trix/kg.hpp"
#include "trix/model.hpp"
#include "trix/relgraph.hpp"
#include "trix/training.hpp"
