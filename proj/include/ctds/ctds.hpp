#pragma once

#include "ctds/config.hpp"
#include "ctds/ctcrw.hpp"
#include "ctds/design.hpp"
#include "ctds/discretize.hpp"
#include "ctds/error.hpp"
#include "ctds/glm.hpp"
#include "ctds/grid.hpp"
#include "ctds/io.hpp"
#include "ctds/lasso.hpp"
#include "ctds/mcmc.hpp"
#include "ctds/optimize.hpp"
#include "ctds/parallel.hpp"
#include "ctds/pipeline.hpp"
#include "ctds/pool.hpp"
#include "ctds/raster_io.hpp"
#include "ctds/rng.hpp"
#include "ctds/simulate.hpp"
#include "ctds/spline.hpp"
