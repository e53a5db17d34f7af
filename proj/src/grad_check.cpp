#include "ptu/grad_check.hpp"

#include <cmath>

#include "ptu/ops.hpp"
#include "ptu/rng.hpp"

namespace ptu {

namespace {

double weighted_sum(const Tensor& y, const std::vector<double>& w) {
    const auto& v = y.values();
    double s = 0.0;
    for (size_t i = 0; i < v.size(); ++i) s += v[i] * w[i];
    return s;
}

std::vector<int64_t> unravel(const Shape& shape, int64_t flat) {
    std::vector<int64_t> coord(shape.size(), 0);
    for (size_t a = shape.size(); a-- > 0;) {
        coord[a] = flat % shape[a];
        flat /= shape[a];
    }
    return coord;
}

}  // namespace

GradReport grad_check(const std::string& op_name, const TensorFn& fn,
                      const std::vector<Tensor>& inputs, double tolerance, double step) {
    if (precision() != Precision::f64)
        throw ValueError("grad_check requires 64-bit precision mode");
    if (tolerance <= 0.0) throw ValueError("grad_check: tolerance must be positive");
    for (const Tensor& in : inputs)
        for (const double v : in.values())
            if (!std::isfinite(v)) throw ValueError("grad_check: non-finite input");

    // Analytic pass on requires_grad leaves.
    std::vector<Tensor> live;
    live.reserve(inputs.size());
    for (const Tensor& in : inputs) live.push_back(Tensor::from(in.shape(), in.values(), true));
    Tensor y = fn(live);

    // Fixed cotangent so one backward probes every output coordinate.
    Rng wrng(derive_seed(0x9d2c5680u, "grad_check_cotangent"));
    std::vector<double> w(static_cast<size_t>(y.numel()));
    for (double& x : w) x = wrng.uniform(0.25, 1.0) * (wrng.uniform() < 0.5 ? -1.0 : 1.0);

    {
        std::vector<double> wv = w;
        Tensor wt = Tensor::from(y.shape(), std::move(wv));
        backward(ops::sum(ops::mul(y, wt)));
    }

    GradReport report;
    report.op_name = op_name;
    report.tolerance = tolerance;
    report.max_rel_err = 0.0;

    for (size_t i = 0; i < inputs.size(); ++i) {
        const auto& base = inputs[i].values();
        std::vector<double> analytic =
            live[i].has_grad() ? live[i].grad() : std::vector<double>(base.size(), 0.0);
        for (size_t j = 0; j < base.size(); ++j) {
            std::vector<Tensor> probe;
            probe.reserve(inputs.size());
            for (size_t t = 0; t < inputs.size(); ++t) probe.push_back(inputs[t]);
            std::vector<double> plus = base, minus = base;
            plus[j] += step;
            minus[j] -= step;
            probe[i] = Tensor::from(inputs[i].shape(), std::move(plus));
            const double fp = weighted_sum(fn(probe), w);
            probe[i] = Tensor::from(inputs[i].shape(), std::move(minus));
            const double fm = weighted_sum(fn(probe), w);
            const double numeric = (fp - fm) / (2.0 * step);
            if (!std::isfinite(numeric))
                throw ValueError("grad_check: non-finite difference quotient for '" + op_name +
                                 "' (op not differentiable at these inputs)");
            const double a = analytic[j];
            const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            const double rel = std::fabs(a - numeric) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_coordinate.assign(1, static_cast<int64_t>(i));
                const auto coord = unravel(inputs[i].shape(), static_cast<int64_t>(j));
                report.worst_coordinate.insert(report.worst_coordinate.end(), coord.begin(),
                                               coord.end());
            }
        }
    }
    report.passed = report.max_rel_err <= tolerance;
    return report;
}

}  // namespace ptu
