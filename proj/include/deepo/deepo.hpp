#pragma once

#include "deepo/errors.hpp"
#include "deepo/io.hpp"
#include "deepo/lqt.hpp"
#include "deepo/matops.hpp"
#include "deepo/opt.hpp"
#include "deepo/param.hpp"
#include "deepo/plant.hpp"
#include "deepo/policy.hpp"
#include "deepo/random.hpp"
