#pragma once

// Dense tensors and reverse-mode differentiation.
#include "spherehead/nd/ops.hpp"
#include "spherehead/nd/tape.hpp"
#include "spherehead/nd/tensor.hpp"
