#pragma once

#include "snid/activation.hpp"
#include "snid/config.hpp"
#include "snid/diagnostics.hpp"
#include "snid/error.hpp"
#include "snid/gd_refine.hpp"
#include "snid/hungarian.hpp"
#include "snid/numdiff.hpp"
#include "snid/pipeline.hpp"
#include "snid/quadrature.hpp"
#include "snid/random.hpp"
#include "snid/shift_init.hpp"
#include "snid/spm.hpp"
#include "snid/subspace.hpp"
#include "snid/teacher.hpp"
