#include "tcv/rng.hpp"

// Header-only; this TU pins the module into the library.
