#pragma once

#include "causalabs/abstraction.hpp"
#include "causalabs/cluster_map.hpp"
#include "causalabs/docalc.hpp"
#include "causalabs/engine.hpp"
#include "causalabs/errors.hpp"
#include "causalabs/graph.hpp"
#include "causalabs/io.hpp"
#include "causalabs/query.hpp"
