#pragma once

// Umbrella header: the whole library in one include.

#include "explora/abtest.hpp"
#include "explora/catalog.hpp"
#include "explora/clustering.hpp"
#include "explora/csv.hpp"
#include "explora/embedding.hpp"
#include "explora/experiment.hpp"
#include "explora/http.hpp"
#include "explora/metrics.hpp"
#include "explora/recommender.hpp"
#include "explora/rng.hpp"
#include "explora/synthetic.hpp"
