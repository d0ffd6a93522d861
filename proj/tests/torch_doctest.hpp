#pragma once

// libtorch's logging header defines CHECK* macros that collide with doctest;
// pull torch in first and drop them so doctest's assertions are the ones used.

#include <torch/torch.h>

#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LT
#undef CHECK_LE
#undef CHECK_GT
#undef CHECK_GE
#undef CHECK_FALSE
#undef CHECK_THROWS
#undef CHECK_NOTHROW

#include "doctest.h"
