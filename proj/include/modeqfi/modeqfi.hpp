#pragma once

#include "modeqfi/errors.hpp"
#include "modeqfi/tolerances.hpp"
#include "modeqfi/symplectic.hpp"
#include "modeqfi/states.hpp"
#include "modeqfi/qfi.hpp"
#include "modeqfi/quadrature.hpp"
#include "modeqfi/modes.hpp"
#include "modeqfi/applications.hpp"
