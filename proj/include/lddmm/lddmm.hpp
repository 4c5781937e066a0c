#pragma once

#include "lddmm/config.hpp"
#include "lddmm/datasets.hpp"
#include "lddmm/errors.hpp"
#include "lddmm/experiments.hpp"
#include "lddmm/flow.hpp"
#include "lddmm/io.hpp"
#include "lddmm/kernels.hpp"
#include "lddmm/optimize.hpp"
#include "lddmm/ot_losses.hpp"
#include "lddmm/point_cloud.hpp"
#include "lddmm/registration.hpp"
