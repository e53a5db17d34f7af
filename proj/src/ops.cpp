#include "ptu/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ptu {

namespace {
std::atomic<int> g_threads{1};

inline bool parallel_worth(int64_t work) { return g_threads.load() > 1 && work >= (1 << 15); }
}  // namespace

int compute_threads() { return g_threads.load(); }
void set_compute_threads(int n) { g_threads.store(n < 1 ? 1 : n); }

namespace ops {

namespace {

void require_rank(const Tensor& t, int64_t rank, const char* op) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

std::vector<double>& ensure_grad(TensorNode& n) {
    if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
    return n.grad;
}

enum class Trans { NN, NT, TN };

// C (m x n) += A · B with the given transposition pattern. A/B extents are
// the logical (post-transpose) ones: A is m x k, B is k x n.
template <typename T>
void gemm_acc(Trans mode, const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    const int64_t work = m * k * n;
#pragma omp parallel for num_threads(g_threads.load()) if (parallel_worth(work)) schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        switch (mode) {
            case Trans::NN:
                for (int64_t l = 0; l < k; ++l) {
                    const T av = a[i * k + l];
                    const T* brow = b + l * n;
                    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
                break;
            case Trans::NT:
                // B given as n x k; dot rows of A with rows of B.
                for (int64_t j = 0; j < n; ++j) {
                    const T* arow = a + i * k;
                    const T* brow = b + j * k;
                    T s = 0;
                    for (int64_t l = 0; l < k; ++l) s += arow[l] * brow[l];
                    crow[j] += s;
                }
                break;
            case Trans::TN:
                // A given as k x m; column i of the stored matrix.
                for (int64_t l = 0; l < k; ++l) {
                    const T av = a[l * m + i];
                    const T* brow = b + l * n;
                    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
                break;
        }
    }
}

// Dispatches on the global precision mode: f32 runs the whole product in
// float (inputs are float-representable by construction), f64 in double.
std::vector<double> gemm(Trans mode, const std::vector<double>& a, const std::vector<double>& b,
                         int64_t m, int64_t k, int64_t n) {
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    if (precision() == Precision::f32) {
        std::vector<float> fa(a.begin(), a.end()), fb(b.begin(), b.end());
        std::vector<float> fc(out.size(), 0.0f);
        gemm_acc(mode, fa.data(), fb.data(), fc.data(), m, k, n);
        std::copy(fc.begin(), fc.end(), out.begin());
    } else {
        gemm_acc(mode, a.data(), b.data(), out.data(), m, k, n);
    }
    return out;
}

void gemm_into(Trans mode, const std::vector<double>& a, const std::vector<double>& b,
               std::vector<double>& c, int64_t m, int64_t k, int64_t n) {
    std::vector<double> delta = gemm(mode, a, b, m, k, n);
    for (size_t i = 0; i < c.size(); ++i) c[i] += delta[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_op("add", a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
        for (int p = 0; p < 2; ++p) {
            TensorNode& parent = *n.parents[p];
            if (!parent.needs_grad) continue;
            auto& g = ensure_grad(parent);
            for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return make_op("mul", a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
        TensorNode& pa = *n.parents[0];
        TensorNode& pb = *n.parents[1];
        if (pa.needs_grad) {
            auto& g = ensure_grad(pa);
            for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.values[i];
        }
        if (pb.needs_grad) {
            auto& g = ensure_grad(pb);
            for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.values[i];
        }
    });
}

Tensor scalar_mul(const Tensor& x, double c) {
    std::vector<double> out(x.values());
    for (double& v : out) v *= c;
    return make_op("scalar_mul", x.shape(), std::move(out), {x}, [c](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.needs_grad) return;
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * c;
    });
}

Tensor scalar_add(const Tensor& x, double c) {
    std::vector<double> out(x.values());
    for (double& v : out) v += c;
    return make_op("scalar_add", x.shape(), std::move(out), {x}, [](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.needs_grad) return;
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    require_rank(m, 2, "add_rowvec");
    require_rank(v, 1, "add_rowvec");
    const int64_t rows = m.dim(0), cols = m.dim(1);
    if (v.dim(0) != cols)
        throw ShapeError("add_rowvec: vector length " + shape_str(v.shape()) +
                         " does not match columns of " + shape_str(m.shape()));
    std::vector<double> out(m.values());
    const auto& vv = v.values();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) out[static_cast<size_t>(r * cols + c)] += vv[c];
    return make_op("add_rowvec", m.shape(), std::move(out), {m, v}, [rows, cols](TensorNode& n) {
        TensorNode& pm = *n.parents[0];
        TensorNode& pv = *n.parents[1];
        if (pm.needs_grad) {
            auto& g = ensure_grad(pm);
            for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (pv.needs_grad) {
            auto& g = ensure_grad(pv);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c) g[c] += n.grad[static_cast<size_t>(r * cols + c)];
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    std::vector<double> out = gemm(Trans::NN, a.values(), b.values(), m, k, n);
    return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& node) {
        TensorNode& pa = *node.parents[0];
        TensorNode& pb = *node.parents[1];
        if (pa.needs_grad)  // dA = dC · B^T
            gemm_into(Trans::NT, node.grad, pb.values, ensure_grad(pa), m, n, k);
        if (pb.needs_grad)  // dB = A^T · dC
            gemm_into(Trans::TN, pa.values, node.grad, ensure_grad(pb), k, m, n);
    });
}

Tensor transpose(const Tensor& x) {
    require_rank(x, 2, "transpose");
    const int64_t r = x.dim(0), c = x.dim(1);
    std::vector<double> out(static_cast<size_t>(r * c));
    const auto& xv = x.values();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(j * r + i)] = xv[static_cast<size_t>(i * c + j)];
    return make_op("transpose", {c, r}, std::move(out), {x}, [r, c](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.needs_grad) return;
        auto& g = ensure_grad(p);
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j)
                g[static_cast<size_t>(i * c + j)] += n.grad[static_cast<size_t>(j * r + i)];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const int64_t cols = parts[0].dim(1);
    int64_t rows = 0;
    for (const Tensor& p : parts) {
        require_rank(p, 2, "concat_rows");
        if (p.dim(1) != cols)
            throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()));
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(rows * cols));
    for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return make_op("concat_rows", {rows, cols}, std::move(out), parts, [](TensorNode& n) {
        size_t at = 0;
        for (auto& pp : n.parents) {
            TensorNode& p = *pp;
            if (p.needs_grad) {
                auto& g = ensure_grad(p);
                for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[at + i];
            }
            at += p.values.size();
        }
    });
}

Tensor slice_rows(const Tensor& x, int64_t begin, int64_t count) {
    require_rank(x, 2, "slice_rows");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (begin < 0 || count < 0 || begin + count > rows)
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + std::to_string(rows));
    const auto& xv = x.values();
    std::vector<double> out(xv.begin() + static_cast<size_t>(begin * cols),
                            xv.begin() + static_cast<size_t>((begin + count) * cols));
    return make_op("slice_rows", {count, cols}, std::move(out), {x}, [begin, cols](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.needs_grad) return;
        auto& g = ensure_grad(p);
        const size_t base = static_cast<size_t>(begin * cols);
        for (size_t i = 0; i < n.grad.size(); ++i) g[base + i] += n.grad[i];
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "concat_cols");
    require_rank(b, 2, "concat_cols");
    if (a.dim(0) != b.dim(0))
        throw ShapeError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const int64_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    std::vector<double> out(static_cast<size_t>(rows * (ca + cb)));
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int64_t r = 0; r < rows; ++r) {
        std::copy_n(av.begin() + static_cast<size_t>(r * ca), ca,
                    out.begin() + static_cast<size_t>(r * (ca + cb)));
        std::copy_n(bv.begin() + static_cast<size_t>(r * cb), cb,
                    out.begin() + static_cast<size_t>(r * (ca + cb) + ca));
    }
    return make_op("concat_cols", {rows, ca + cb}, std::move(out), {a, b},
                   [rows, ca, cb](TensorNode& n) {
                       TensorNode& pa = *n.parents[0];
                       TensorNode& pb = *n.parents[1];
                       const int64_t cc = ca + cb;
                       if (pa.needs_grad) {
                           auto& g = ensure_grad(pa);
                           for (int64_t r = 0; r < rows; ++r)
                               for (int64_t c = 0; c < ca; ++c)
                                   g[static_cast<size_t>(r * ca + c)] +=
                                       n.grad[static_cast<size_t>(r * cc + c)];
                       }
                       if (pb.needs_grad) {
                           auto& g = ensure_grad(pb);
                           for (int64_t r = 0; r < rows; ++r)
                               for (int64_t c = 0; c < cb; ++c)
                                   g[static_cast<size_t>(r * cb + c)] +=
                                       n.grad[static_cast<size_t>(r * cc + ca + c)];
                       }
                   });
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows) {
    require_rank(x, 2, "gather_rows");
    const int64_t nrows = x.dim(0), cols = x.dim(1);
    for (const int64_t r : rows)
        if (r < 0 || r >= nrows)
            throw ShapeError("gather_rows: index " + std::to_string(r) + " out of " +
                             std::to_string(nrows) + " rows");
    std::vector<double> out(rows.size() * static_cast<size_t>(cols));
    const auto& xv = x.values();
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy_n(xv.begin() + static_cast<size_t>(rows[i] * cols), cols,
                    out.begin() + i * static_cast<size_t>(cols));
    auto idx = std::make_shared<std::vector<int64_t>>(rows);
    return make_op("gather_rows", {static_cast<int64_t>(rows.size()), cols}, std::move(out), {x},
                   [idx, cols](TensorNode& n) {
                       TensorNode& p = *n.parents[0];
                       if (!p.needs_grad) return;
                       auto& g = ensure_grad(p);
                       for (size_t i = 0; i < idx->size(); ++i) {
                           const size_t dst = static_cast<size_t>((*idx)[i] * cols);
                           const size_t src = i * static_cast<size_t>(cols);
                           for (int64_t c = 0; c < cols; ++c) g[dst + c] += n.grad[src + c];
                       }
                   });
}

Tensor softmax(const Tensor& x, int64_t axis) {
    const Shape& s = x.shape();
    if (axis < 0 || axis >= static_cast<int64_t>(s.size()))
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of rank " +
                         std::to_string(s.size()));
    const int64_t len = s[static_cast<size_t>(axis)];
    if (len < 1) throw ShapeError("softmax: empty axis");
    int64_t inner = 1, outer = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    for (size_t i = 0; i < static_cast<size_t>(axis); ++i) outer *= s[i];

    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const size_t base = static_cast<size_t>(o * len * inner + in);
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t i = 0; i < len; ++i) mx = std::max(mx, xv[base + static_cast<size_t>(i * inner)]);
            double z = 0.0;
            for (int64_t i = 0; i < len; ++i) {
                const double e = std::exp(xv[base + static_cast<size_t>(i * inner)] - mx);
                out[base + static_cast<size_t>(i * inner)] = e;
                z += e;
            }
            for (int64_t i = 0; i < len; ++i) out[base + static_cast<size_t>(i * inner)] /= z;
        }
    }
    return make_op("softmax", s, std::move(out), {x}, [len, inner, outer](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.needs_grad) return;
        auto& g = ensure_grad(p);
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const size_t base = static_cast<size_t>(o * len * inner + in);
                double dot = 0.0;
                for (int64_t i = 0; i < len; ++i) {
                    const size_t at = base + static_cast<size_t>(i * inner);
                    dot += n.grad[at] * n.values[at];
                }
                for (int64_t i = 0; i < len; ++i) {
                    const size_t at = base + static_cast<size_t>(i * inner);
                    g[at] += n.values[at] * (n.grad[at] - dot);
                }
            }
        }
    });
}

Tensor masked_row_softmax(const Tensor& x, const std::vector<bool>& excluded_cols) {
    require_rank(x, 2, "masked_row_softmax");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (!excluded_cols.empty() && static_cast<int64_t>(excluded_cols.size()) != cols)
        throw ShapeError("masked_row_softmax: mask length " +
                         std::to_string(excluded_cols.size()) + " vs " + std::to_string(cols) +
                         " columns");
    bool any_kept = excluded_cols.empty();
    for (size_t c = 0; c < excluded_cols.size(); ++c) any_kept = any_kept || !excluded_cols[c];
    if (!any_kept) throw ValueError("masked_row_softmax: every column is excluded");

    const auto& xv = x.values();
    std::vector<double> out(xv.size(), 0.0);
    auto kept = [&](int64_t c) { return excluded_cols.empty() || !excluded_cols[static_cast<size_t>(c)]; };
    for (int64_t r = 0; r < rows; ++r) {
        const size_t base = static_cast<size_t>(r * cols);
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t c = 0; c < cols; ++c)
            if (kept(c)) mx = std::max(mx, xv[base + static_cast<size_t>(c)]);
        double z = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            if (!kept(c)) continue;
            const double e = std::exp(xv[base + static_cast<size_t>(c)] - mx);
            out[base + static_cast<size_t>(c)] = e;
            z += e;
        }
        for (int64_t c = 0; c < cols; ++c)
            if (kept(c)) out[base + static_cast<size_t>(c)] /= z;
    }
    auto mask = std::make_shared<std::vector<bool>>(excluded_cols);
    return make_op("masked_row_softmax", x.shape(), std::move(out), {x},
                   [rows, cols, mask](TensorNode& n) {
                       TensorNode& p = *n.parents[0];
                       if (!p.needs_grad) return;
                       auto& g = ensure_grad(p);
                       auto kept = [&](int64_t c) {
                           return mask->empty() || !(*mask)[static_cast<size_t>(c)];
                       };
                       for (int64_t r = 0; r < rows; ++r) {
                           const size_t base = static_cast<size_t>(r * cols);
                           double dot = 0.0;
                           for (int64_t c = 0; c < cols; ++c) {
                               const size_t at = base + static_cast<size_t>(c);
                               dot += n.grad[at] * n.values[at];
                           }
                           for (int64_t c = 0; c < cols; ++c) {
                               if (!kept(c)) continue;
                               const size_t at = base + static_cast<size_t>(c);
                               g[at] += n.values[at] * (n.grad[at] - dot);
                           }
                       }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    const int64_t d = x.shape().back();
    if (d < 1) throw ShapeError("layer_norm: empty last axis");
    if (eps <= 0.0) throw ValueError("layer_norm: eps must be positive");
    require_rank(gain, 1, "layer_norm");
    require_rank(bias, 1, "layer_norm");
    if (gain.dim(0) != d || bias.dim(0) != d)
        throw ShapeError("layer_norm: gain/bias length " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " does not match last axis " +
                         std::to_string(d));
    const int64_t rows = x.numel() / d;
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    std::vector<double> out(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
#pragma omp parallel for num_threads(g_threads.load()) if (parallel_worth(x.numel() * 4)) schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const size_t base = static_cast<size_t>(r * d);
        double mean = 0.0;
        for (int64_t c = 0; c < d; ++c) mean += xv[base + static_cast<size_t>(c)];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t c = 0; c < d; ++c) {
            const double t = xv[base + static_cast<size_t>(c)] - mean;
            var += t * t;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        for (int64_t c = 0; c < d; ++c) {
            const double h = (xv[base + static_cast<size_t>(c)] - mean) * is;
            (*xhat)[base + static_cast<size_t>(c)] = h;
            out[base + static_cast<size_t>(c)] = gv[c] * h + bv[c];
        }
    }
    return make_op("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                   [rows, d, inv_std, xhat](TensorNode& n) {
                       TensorNode& px = *n.parents[0];
                       TensorNode& pg = *n.parents[1];
                       TensorNode& pb = *n.parents[2];
                       const auto& gv = pg.values;
                       if (px.needs_grad) {
                           auto& g = ensure_grad(px);
                           for (int64_t r = 0; r < rows; ++r) {
                               const size_t base = static_cast<size_t>(r * d);
                               const double is = (*inv_std)[static_cast<size_t>(r)];
                               double sum_dh = 0.0, sum_dh_h = 0.0;
                               for (int64_t c = 0; c < d; ++c) {
                                   const size_t at = base + static_cast<size_t>(c);
                                   const double dh = n.grad[at] * gv[c];
                                   sum_dh += dh;
                                   sum_dh_h += dh * (*xhat)[at];
                               }
                               const double inv_d = 1.0 / static_cast<double>(d);
                               for (int64_t c = 0; c < d; ++c) {
                                   const size_t at = base + static_cast<size_t>(c);
                                   const double dh = n.grad[at] * gv[c];
                                   g[at] += is * (dh - inv_d * sum_dh -
                                                  (*xhat)[at] * inv_d * sum_dh_h);
                               }
                           }
                       }
                       if (pg.needs_grad) {
                           auto& g = ensure_grad(pg);
                           for (int64_t r = 0; r < rows; ++r)
                               for (int64_t c = 0; c < d; ++c) {
                                   const size_t at = static_cast<size_t>(r * d + c);
                                   g[c] += n.grad[at] * (*xhat)[at];
                               }
                       }
                       if (pb.needs_grad) {
                           auto& g = ensure_grad(pb);
                           for (int64_t r = 0; r < rows; ++r)
                               for (int64_t c = 0; c < d; ++c)
                                   g[c] += n.grad[static_cast<size_t>(r * d + c)];
                       }
                   });
}

Tensor gelu(const Tensor& x) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    constexpr double inv_sqrt2 = 0.70710678118654752440;
#pragma omp parallel for num_threads(g_threads.load()) if (parallel_worth(x.numel() * 8)) schedule(static)
    for (int64_t i = 0; i < static_cast<int64_t>(xv.size()); ++i) {
        const double v = xv[static_cast<size_t>(i)];
        out[static_cast<size_t>(i)] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    return make_op("gelu", x.shape(), std::move(out), {x}, [](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.needs_grad) return;
        auto& g = ensure_grad(p);
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        for (size_t i = 0; i < g.size(); ++i) {
            const double v = p.values[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            g[i] += n.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor l2_normalize_rows(const Tensor& x) {
    require_rank(x, 2, "l2_normalize_rows");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    auto inv_norm = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const size_t base = static_cast<size_t>(r * cols);
        double ss = 0.0;
        for (int64_t c = 0; c < cols; ++c) ss += xv[base + static_cast<size_t>(c)] * xv[base + static_cast<size_t>(c)];
        const double norm = std::sqrt(ss);
        if (norm < 1e-12)
            throw ValueError("l2_normalize_rows: row " + std::to_string(r) + " has ~zero norm");
        const double in = 1.0 / norm;
        (*inv_norm)[static_cast<size_t>(r)] = in;
        for (int64_t c = 0; c < cols; ++c) out[base + static_cast<size_t>(c)] = xv[base + static_cast<size_t>(c)] * in;
    }
    return make_op("l2_normalize_rows", x.shape(), std::move(out), {x},
                   [rows, cols, inv_norm](TensorNode& n) {
                       TensorNode& p = *n.parents[0];
                       if (!p.needs_grad) return;
                       auto& g = ensure_grad(p);
                       for (int64_t r = 0; r < rows; ++r) {
                           const size_t base = static_cast<size_t>(r * cols);
                           const double in = (*inv_norm)[static_cast<size_t>(r)];
                           double dot = 0.0;
                           for (int64_t c = 0; c < cols; ++c) {
                               const size_t at = base + static_cast<size_t>(c);
                               dot += n.grad[at] * n.values[at];
                           }
                           for (int64_t c = 0; c < cols; ++c) {
                               const size_t at = base + static_cast<size_t>(c);
                               g[at] += in * (n.grad[at] - dot * n.values[at]);
                           }
                       }
                   });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (const double v : x.values()) s += v;
    return make_op("sum", {1}, {s}, {x}, [](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.needs_grad) return;
        auto& g = ensure_grad(p);
        for (double& v : g) v += n.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    double s = 0.0;
    for (const double v : x.values()) s += v;
    return make_op("mean", {1}, {s * inv}, {x}, [inv](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.needs_grad) return;
        auto& g = ensure_grad(p);
        for (double& v : g) v += n.grad[0] * inv;
    });
}

Tensor cross_entropy_logits_mean(const Tensor& logits, const std::vector<int64_t>& targets) {
    require_rank(logits, 2, "cross_entropy");
    const int64_t n = logits.dim(0), v = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != n)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
    for (const int64_t t : targets)
        if (t < 0 || t >= v)
            throw ValueError("cross_entropy: target id " + std::to_string(t) + " out of range [0, " +
                             std::to_string(v) + ")");
    const auto& lv = logits.values();
    double loss = 0.0;
    for (int64_t r = 0; r < n; ++r) {
        const size_t base = static_cast<size_t>(r * v);
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t c = 0; c < v; ++c) mx = std::max(mx, lv[base + static_cast<size_t>(c)]);
        double z = 0.0;
        for (int64_t c = 0; c < v; ++c) z += std::exp(lv[base + static_cast<size_t>(c)] - mx);
        loss += std::log(z) + mx - lv[base + static_cast<size_t>(targets[static_cast<size_t>(r)])];
    }
    loss /= static_cast<double>(n);
    auto t = std::make_shared<std::vector<int64_t>>(targets);
    return make_op("cross_entropy", {1}, {loss}, {logits}, [n, v, t](TensorNode& node) {
        TensorNode& p = *node.parents[0];
        if (!p.needs_grad) return;
        auto& g = ensure_grad(p);
        const double scale = node.grad[0] / static_cast<double>(n);
        for (int64_t r = 0; r < n; ++r) {
            const size_t base = static_cast<size_t>(r * v);
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t c = 0; c < v; ++c) mx = std::max(mx, p.values[base + static_cast<size_t>(c)]);
            double z = 0.0;
            for (int64_t c = 0; c < v; ++c) z += std::exp(p.values[base + static_cast<size_t>(c)] - mx);
            for (int64_t c = 0; c < v; ++c) {
                const double prob = std::exp(p.values[base + static_cast<size_t>(c)] - mx) / z;
                const double onehot = (c == (*t)[static_cast<size_t>(r)]) ? 1.0 : 0.0;
                g[base + static_cast<size_t>(c)] += scale * (prob - onehot);
            }
        }
    });
}

Tensor packed_mha(const Tensor& q, const Tensor& k, const Tensor& v,
                  const std::vector<int64_t>& offsets, int64_t heads,
                  const std::vector<bool>& key_excluded) {
    require_rank(q, 2, "packed_mha");
    require_same_shape(q, k, "packed_mha");
    require_same_shape(q, v, "packed_mha");
    const int64_t rows = q.dim(0), d = q.dim(1);
    if (heads < 1 || d % heads != 0)
        throw ShapeError("packed_mha: dim " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows)
        throw ShapeError("packed_mha: offsets must start at 0 and end at row count");
    for (size_t s = 1; s < offsets.size(); ++s)
        if (offsets[s] < offsets[s - 1]) throw ShapeError("packed_mha: offsets not ascending");
    if (!key_excluded.empty() && static_cast<int64_t>(key_excluded.size()) != rows)
        throw ShapeError("packed_mha: mask length mismatch");

    const int64_t n_samples = static_cast<int64_t>(offsets.size()) - 1;
    const int64_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // Per-sample check: a sample with every key excluded cannot attend.
    if (!key_excluded.empty()) {
        for (int64_t s = 0; s < n_samples; ++s) {
            bool any = offsets[s + 1] == offsets[s];
            for (int64_t r = offsets[s]; r < offsets[s + 1] && !any; ++r)
                any = !key_excluded[static_cast<size_t>(r)];
            if (!any && offsets[s + 1] > offsets[s])
                throw ValueError("packed_mha: sample " + std::to_string(s) +
                                 " has every key excluded");
        }
    }

    const auto& qv = q.values();
    const auto& kv = k.values();
    const auto& vv = v.values();
    std::vector<double> out(qv.size(), 0.0);

    // Attention probabilities are cached for the backward pass; sample s,
    // head h occupies probs[prob_off[s] + h*L*L ...] with L = sample length.
    auto prob_off = std::make_shared<std::vector<size_t>>(static_cast<size_t>(n_samples) + 1, 0);
    for (int64_t s = 0; s < n_samples; ++s) {
        const int64_t len = offsets[s + 1] - offsets[s];
        (*prob_off)[static_cast<size_t>(s) + 1] =
            (*prob_off)[static_cast<size_t>(s)] + static_cast<size_t>(heads * len * len);
    }
    auto probs = std::make_shared<std::vector<double>>(prob_off->back(), 0.0);
    auto offs = std::make_shared<std::vector<int64_t>>(offsets);

#pragma omp parallel for num_threads(g_threads.load()) if (g_threads.load() > 1 && n_samples > 1) schedule(static)
    for (int64_t s = 0; s < n_samples; ++s) {
        const int64_t o = offsets[s];
        const int64_t len = offsets[s + 1] - o;
        for (int64_t h = 0; h < heads; ++h) {
            const int64_t hb = h * dh;
            double* p = probs->data() + (*prob_off)[static_cast<size_t>(s)] +
                        static_cast<size_t>(h * len * len);
            for (int64_t a = 0; a < len; ++a) {
                double* prow = p + a * len;
                const double* qrow = qv.data() + (o + a) * d + hb;
                double mx = -std::numeric_limits<double>::infinity();
                for (int64_t b = 0; b < len; ++b) {
                    if (!key_excluded.empty() && key_excluded[static_cast<size_t>(o + b)]) {
                        prow[b] = -std::numeric_limits<double>::infinity();
                        continue;
                    }
                    const double* krow = kv.data() + (o + b) * d + hb;
                    double sdot = 0.0;
                    for (int64_t i = 0; i < dh; ++i) sdot += qrow[i] * krow[i];
                    prow[b] = sdot * scale;
                    mx = std::max(mx, prow[b]);
                }
                double z = 0.0;
                for (int64_t b = 0; b < len; ++b) {
                    if (std::isinf(prow[b]) && prow[b] < 0) {
                        prow[b] = 0.0;
                        continue;
                    }
                    prow[b] = std::exp(prow[b] - mx);
                    z += prow[b];
                }
                double* orow = out.data() + (o + a) * d + hb;
                for (int64_t b = 0; b < len; ++b) {
                    prow[b] /= z;
                    const double w = prow[b];
                    if (w == 0.0) continue;
                    const double* vrow = vv.data() + (o + b) * d + hb;
                    for (int64_t i = 0; i < dh; ++i) orow[i] += w * vrow[i];
                }
            }
        }
    }
    if (precision() == Precision::f32)
        for (double& x : out) x = static_cast<double>(static_cast<float>(x));

    return make_op(
        "packed_mha", q.shape(), std::move(out), {q, k, v},
        [offs, probs, prob_off, heads, dh, d, scale](TensorNode& node) {
            TensorNode& pq = *node.parents[0];
            TensorNode& pk = *node.parents[1];
            TensorNode& pv = *node.parents[2];
            const bool need_q = pq.needs_grad, need_k = pk.needs_grad, need_v = pv.needs_grad;
            if (!(need_q || need_k || need_v)) return;
            auto& gq = need_q ? ensure_grad(pq) : pq.grad;
            auto& gk = need_k ? ensure_grad(pk) : pk.grad;
            auto& gv = need_v ? ensure_grad(pv) : pv.grad;
            const int64_t n_samples = static_cast<int64_t>(offs->size()) - 1;
#pragma omp parallel for num_threads(g_threads.load()) if (g_threads.load() > 1 && n_samples > 1) schedule(static)
            for (int64_t s = 0; s < n_samples; ++s) {
                const int64_t o = (*offs)[s];
                const int64_t len = (*offs)[s + 1] - o;
                std::vector<double> dp(static_cast<size_t>(len), 0.0);
                for (int64_t h = 0; h < heads; ++h) {
                    const int64_t hb = h * dh;
                    const double* p = probs->data() + (*prob_off)[static_cast<size_t>(s)] +
                                      static_cast<size_t>(h * len * len);
                    for (int64_t a = 0; a < len; ++a) {
                        const double* prow = p + a * len;
                        const double* grow = node.grad.data() + (o + a) * d + hb;
                        // dP[a][b] = dOut[a] . V[b], then softmax backward.
                        double dot = 0.0;
                        for (int64_t b = 0; b < len; ++b) {
                            const double* vrow = pv.values.data() + (o + b) * d + hb;
                            double sdot = 0.0;
                            for (int64_t i = 0; i < dh; ++i) sdot += grow[i] * vrow[i];
                            dp[static_cast<size_t>(b)] = sdot;
                            dot += sdot * prow[b];
                        }
                        for (int64_t b = 0; b < len; ++b) {
                            const double w = prow[b];
                            if (w == 0.0) continue;
                            const double ds = w * (dp[static_cast<size_t>(b)] - dot) * scale;
                            if (need_v) {
                                double* gvr = gv.data() + (o + b) * d + hb;
                                for (int64_t i = 0; i < dh; ++i) gvr[i] += w * grow[i];
                            }
                            const double* qrow = pq.values.data() + (o + a) * d + hb;
                            const double* krow = pk.values.data() + (o + b) * d + hb;
                            if (need_q) {
                                double* gqr = gq.data() + (o + a) * d + hb;
                                for (int64_t i = 0; i < dh; ++i) gqr[i] += ds * krow[i];
                            }
                            if (need_k) {
                                double* gkr = gk.data() + (o + b) * d + hb;
                                for (int64_t i = 0; i < dh; ++i) gkr[i] += ds * qrow[i];
                            }
                        }
                    }
                }
            }
        });
}

}  // namespace ops
}  // namespace ptu
