#pragma once

#include "mrtensor/error.hpp"
#include "mrtensor/parallel.hpp"
#include "mrtensor/ingest.hpp"
#include "mrtensor/sparse_tensor.hpp"
#include "mrtensor/mrencode.hpp"
#include "mrtensor/model.hpp"
#include "mrtensor/design.hpp"
#include "mrtensor/solver.hpp"
#include "mrtensor/analysis.hpp"
#include "mrtensor/config.hpp"
#include "mrtensor/cli.hpp"
