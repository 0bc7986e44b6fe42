#pragma once

#include "ans/ans_sampler.hpp"
#include "ans/dataset.hpp"
#include "ans/error.hpp"
#include "ans/experiment.hpp"
#include "ans/known_classifier.hpp"
#include "ans/matrix.hpp"
#include "ans/metrics.hpp"
#include "ans/nn.hpp"
#include "ans/oracles.hpp"
#include "ans/ovr.hpp"
#include "ans/parallel.hpp"
#include "ans/random.hpp"
