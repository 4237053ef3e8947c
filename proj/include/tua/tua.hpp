#pragma once

#include "tua/error.hpp"
#include "tua/matrix.hpp"
#include "tua/rng.hpp"
#include "tua/graph.hpp"
#include "tua/normalize.hpp"
#include "tua/perturbed_graph.hpp"
#include "tua/gcn.hpp"
#include "tua/checkpoint.hpp"
#include "tua/subgraph.hpp"
#include "tua/attack.hpp"
#include "tua/attack_io.hpp"
#include "tua/dataio.hpp"
#include "tua/harness.hpp"
