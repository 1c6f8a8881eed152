#pragma once

#include "sbp/grid.hpp"
#include "sbp/field.hpp"
#include "sbp/fft.hpp"
#include "sbp/spectral.hpp"
#include "sbp/resample.hpp"
#include "sbp/snapshot_io.hpp"
#include "sbp/kernel.hpp"
#include "sbp/propagator.hpp"
#include "sbp/config.hpp"
#include "sbp/dynamics.hpp"
#include "sbp/scattering.hpp"
#include "sbp/experiments.hpp"
