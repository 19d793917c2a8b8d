#pragma once

#include "triplet_debias/augment.hpp"
#include "triplet_debias/error.hpp"
#include "triplet_debias/geometry.hpp"
#include "triplet_debias/graph.hpp"
#include "triplet_debias/inference.hpp"
#include "triplet_debias/io.hpp"
#include "triplet_debias/metrics.hpp"
#include "triplet_debias/parallel.hpp"
#include "triplet_debias/prior.hpp"
#include "triplet_debias/vocabulary.hpp"
