#include "ptu/verify.hpp"

#include <cmath>

#include "ptu/ops.hpp"
#include "ptu/rng.hpp"

namespace ptu {

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.uniform(-scale, scale);
    return Tensor::from(std::move(shape), std::move(v));
}

struct PrecisionGuard {
    Precision saved = precision();
    PrecisionGuard() { set_precision(Precision::f64); }
    ~PrecisionGuard() { set_precision(saved); }
};

}  // namespace

std::vector<GradReport> run_gradient_verification(uint64_t seed, int trials, double tolerance) {
    PrecisionGuard guard;
    std::vector<GradReport> reports;

    auto check = [&](const std::string& name, const TensorFn& fn,
                     const std::function<std::vector<Tensor>(Rng&)>& make_inputs) {
        for (int t = 0; t < trials; ++t) {
            Rng rng(derive_seed(seed, "verify." + name, static_cast<uint64_t>(t)));
            reports.push_back(grad_check(name, fn, make_inputs(rng), tolerance));
        }
    };

    check("add", [](const std::vector<Tensor>& in) { return ops::add(in[0], in[1]); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 4}), rand_tensor(r, {3, 4})}; });
    check("mul", [](const std::vector<Tensor>& in) { return ops::mul(in[0], in[1]); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {2, 5}), rand_tensor(r, {2, 5})}; });
    check("scalar_mul", [](const std::vector<Tensor>& in) { return ops::scalar_mul(in[0], -1.7); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {4})}; });
    check("scalar_add", [](const std::vector<Tensor>& in) { return ops::scalar_add(in[0], 0.3); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {4})}; });
    check("add_rowvec",
          [](const std::vector<Tensor>& in) { return ops::add_rowvec(in[0], in[1]); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 4}), rand_tensor(r, {4})}; });
    check("matmul", [](const std::vector<Tensor>& in) { return ops::matmul(in[0], in[1]); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 4}), rand_tensor(r, {4, 2})}; });
    check("transpose", [](const std::vector<Tensor>& in) { return ops::transpose(in[0]); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 5})}; });
    check("concat_rows",
          [](const std::vector<Tensor>& in) { return ops::concat_rows({in[0], in[1], in[2]}); },
          [](Rng& r) {
              return std::vector<Tensor>{rand_tensor(r, {2, 3}), rand_tensor(r, {1, 3}),
                                         rand_tensor(r, {3, 3})};
          });
    check("slice_rows",
          [](const std::vector<Tensor>& in) { return ops::slice_rows(in[0], 1, 2); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {4, 3})}; });
    check("concat_cols",
          [](const std::vector<Tensor>& in) { return ops::concat_cols(in[0], in[1]); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 2}), rand_tensor(r, {3, 4})}; });
    check("gather_rows",
          [](const std::vector<Tensor>& in) { return ops::gather_rows(in[0], {2, 0, 2, 3}); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {4, 3})}; });
    check("softmax_axis0", [](const std::vector<Tensor>& in) { return ops::softmax(in[0], 0); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {4, 3}, 2.0)}; });
    check("softmax_axis1", [](const std::vector<Tensor>& in) { return ops::softmax(in[0], 1); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 5}, 2.0)}; });
    check("masked_row_softmax",
          [](const std::vector<Tensor>& in) {
              return ops::masked_row_softmax(in[0], {false, true, false, false, true});
          },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 5}, 2.0)}; });
    check("layer_norm",
          [](const std::vector<Tensor>& in) { return ops::layer_norm(in[0], in[1], in[2]); },
          [](Rng& r) {
              return std::vector<Tensor>{rand_tensor(r, {3, 6}, 2.0),
                                         rand_tensor(r, {6}), rand_tensor(r, {6})};
          });
    check("gelu", [](const std::vector<Tensor>& in) { return ops::gelu(in[0]); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {2, 7}, 3.0)}; });
    check("l2_normalize_rows",
          [](const std::vector<Tensor>& in) { return ops::l2_normalize_rows(in[0]); },
          [](Rng& r) {
              Tensor t = rand_tensor(r, {3, 5});
              std::vector<double> v = t.values();
              for (double& x : v) x += (x >= 0 ? 0.5 : -0.5);  // keep rows away from zero norm
              return std::vector<Tensor>{Tensor::from({3, 5}, std::move(v))};
          });
    check("sum", [](const std::vector<Tensor>& in) { return ops::sum(in[0]); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 4})}; });
    check("mean", [](const std::vector<Tensor>& in) { return ops::mean(in[0]); },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 4})}; });
    check("cross_entropy",
          [](const std::vector<Tensor>& in) {
              return ops::cross_entropy_logits_mean(in[0], {2, 0, 4});
          },
          [](Rng& r) { return std::vector<Tensor>{rand_tensor(r, {3, 5}, 2.0)}; });
    check("packed_mha",
          [](const std::vector<Tensor>& in) {
              return ops::packed_mha(in[0], in[1], in[2], {0, 3, 5}, 2);
          },
          [](Rng& r) {
              return std::vector<Tensor>{rand_tensor(r, {5, 4}), rand_tensor(r, {5, 4}),
                                         rand_tensor(r, {5, 4})};
          });
    check("packed_mha_masked",
          [](const std::vector<Tensor>& in) {
              return ops::packed_mha(in[0], in[1], in[2], {0, 3, 6}, 2,
                                     {false, false, true, false, true, false});
          },
          [](Rng& r) {
              return std::vector<Tensor>{rand_tensor(r, {6, 4}), rand_tensor(r, {6, 4}),
                                         rand_tensor(r, {6, 4})};
          });

    return reports;
}

}  // namespace ptu
