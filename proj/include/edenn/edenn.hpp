#pragma once

#include "edenn/autodiff.hpp"
#include "edenn/checkpoint.hpp"
#include "edenn/config.hpp"
#include "edenn/edec.hpp"
#include "edenn/edec_graph.hpp"
#include "edenn/events.hpp"
#include "edenn/network.hpp"
#include "edenn/ops.hpp"
#include "edenn/parallel.hpp"
#include "edenn/random.hpp"
#include "edenn/stream.hpp"
#include "edenn/synth.hpp"
#include "edenn/tensor.hpp"
#include "edenn/train.hpp"
