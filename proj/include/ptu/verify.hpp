#pragma once

#include <cstdint>
#include <vector>

#include "ptu/grad_check.hpp"

namespace ptu {

// Finite-difference verification of every differentiable primitive and of the
// loss compositions, each at `trials` random points. Runs in 64-bit mode and
// restores the previous precision mode on exit. Used by the `grad-check` CLI
// command, the unit tests, and the acceptance suite.
std::vector<GradReport> run_gradient_verification(uint64_t seed, int trials = 5,
                                                  double tolerance = 1e-4);

}  // namespace ptu
