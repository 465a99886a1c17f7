#pragma once

#include "lattice/band_structure.hpp"
#include "lattice/constants.hpp"
#include "lattice/ensemble.hpp"
#include "lattice/fitting.hpp"
#include "lattice/grape.hpp"
#include "lattice/observables.hpp"
#include "lattice/propagate.hpp"
#include "lattice/pulse.hpp"
#include "lattice/scenario.hpp"
#include "lattice/three_level.hpp"
#include "lattice/units.hpp"
#include "lattice/wannier.hpp"
