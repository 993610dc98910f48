#pragma once

#include "core.hpp"
#include "lattice.hpp"
#include "symbol_model.hpp"
#include "symbols.hpp"
#include "perturbation.hpp"
#include "floquet.hpp"
#include "resonance.hpp"
#include "gauge.hpp"
#include "xisearch.hpp"
#include "manifest.hpp"
#include "io.hpp"
