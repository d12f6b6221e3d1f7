#pragma once

#include "mehler/common.hpp"
#include "mehler/config.hpp"
#include "mehler/feynman_kac.hpp"
#include "mehler/kernel.hpp"
#include "mehler/linalg.hpp"
#include "mehler/matrix_functions.hpp"
#include "mehler/operators.hpp"
#include "mehler/paths.hpp"
#include "mehler/riccati.hpp"
#include "mehler/rng.hpp"
#include "mehler/serialization.hpp"
