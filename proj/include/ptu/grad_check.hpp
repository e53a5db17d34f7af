#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ptu/tensor.hpp"

namespace ptu {

struct GradReport {
    std::string op_name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    // {input index, multi-dim coordinate...} of the worst entry.
    std::vector<int64_t> worst_coordinate;
};

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Verifies reverse-mode gradients of `fn` against central finite differences
// at the given inputs. Multi-output fns are scalarized with a fixed random
// cotangent, so the whole Jacobian is probed in one backward pass. Relative
// error uses a max(1, |a|, |b|) denominator. Non-finite difference quotients
// mean the op is not differentiable at these inputs and raise an error.
// Requires 64-bit precision mode.
GradReport grad_check(const std::string& op_name, const TensorFn& fn,
                      const std::vector<Tensor>& inputs, double tolerance = 1e-4,
                      double step = 1e-5);

}  // namespace ptu
