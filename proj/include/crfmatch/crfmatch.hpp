#pragma once

#include "chain.hpp"
#include "crf.hpp"
#include "evaluation.hpp"
#include "features.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "path_discovery.hpp"
#include "pipeline.hpp"
#include "projection.hpp"
#include "road_network.hpp"
#include "synthetic.hpp"
#include "training.hpp"
