#pragma once

#include "optiforest/data.hpp"
#include "optiforest/error.hpp"
#include "optiforest/eval.hpp"
#include "optiforest/forest.hpp"
#include "optiforest/lsh_tree.hpp"
#include "optiforest/model_io.hpp"
#include "optiforest/opt_tree.hpp"
#include "optiforest/random.hpp"
#include "optiforest/theory.hpp"
#include "optiforest/tree.hpp"
