#pragma once

#include "latchange/baselines.hpp"
#include "latchange/error.hpp"
#include "latchange/grid.hpp"
#include "latchange/image_io.hpp"
#include "latchange/matching.hpp"
#include "latchange/metrics.hpp"
#include "latchange/otsu.hpp"
#include "latchange/probe.hpp"
#include "latchange/proposal_ops.hpp"
#include "latchange/raster.hpp"
#include "latchange/records.hpp"
#include "latchange/render.hpp"
#include "latchange/rle.hpp"
#include "latchange/session.hpp"
#include "latchange/tensor_archive.hpp"
