#include "ptu/prompts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ptu/ops.hpp"

namespace ptu {

PromptPool make_prompt_pool(int64_t pool_size, int64_t d, Modality modality, Rng& rng) {
    if (pool_size < 1) throw ValueError("prompt pool must have at least one entry");
    PromptPool pool;
    pool.entries = Tensor::randn({pool_size, d}, rng, 0.02, /*requires_grad=*/true);
    pool.modality = modality;
    pool.selection_counts.assign(static_cast<size_t>(pool_size), 0);
    return pool;
}

std::vector<double> pool_query(const EmbeddingSequence& seq, PoolingMode mode) {
    const int64_t d = seq.mat.dim(1);
    const auto& v = seq.mat.values();
    std::vector<double> q;
    int64_t count = 0;
    for (int64_t r = 0; r < seq.length(); ++r) {
        if (seq.prov[static_cast<size_t>(r)] != Provenance::real) continue;
        const double* row = v.data() + r * d;
        if (count == 0) {
            q.assign(row, row + d);
        } else if (mode == PoolingMode::average) {
            for (int64_t c = 0; c < d; ++c) q[static_cast<size_t>(c)] += row[c];
        } else {
            for (int64_t c = 0; c < d; ++c)
                q[static_cast<size_t>(c)] = std::max(q[static_cast<size_t>(c)], row[c]);
        }
        ++count;
    }
    if (count == 0) throw ValueError("pool_query: sequence has no real positions");
    if (mode == PoolingMode::average)
        for (double& x : q) x /= static_cast<double>(count);
    return q;
}

PromptSelection select_prompts(PromptPool& pool, const std::vector<double>& query, int64_t k) {
    const int64_t p = pool.size(), d = pool.entries.dim(1);
    if (k == 0) throw ValueError("select_prompts: k must be at least 1");
    if (k < 0 || k > p)
        throw ValueError("select_prompts: k=" + std::to_string(k) + " exceeds pool size " +
                         std::to_string(p));
    if (static_cast<int64_t>(query.size()) != d)
        throw ShapeError("select_prompts: query length " + std::to_string(query.size()) +
                         " does not match entry dimension " + std::to_string(d));
    for (const double x : query)
        if (!std::isfinite(x)) throw ValueError("select_prompts: non-finite query");

    const auto& e = pool.entries.values();
    std::vector<double> scores(static_cast<size_t>(p), 0.0);
    for (int64_t i = 0; i < p; ++i) {
        const double* row = e.data() + i * d;
        double s = 0.0;
        for (int64_t c = 0; c < d; ++c) s += row[c] * query[static_cast<size_t>(c)];
        scores[static_cast<size_t>(i)] = s;
    }
    std::vector<int64_t> order(static_cast<size_t>(p));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        const double sa = scores[static_cast<size_t>(a)], sb = scores[static_cast<size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });

    PromptSelection sel;
    sel.query = query;
    sel.indices.assign(order.begin(), order.begin() + static_cast<size_t>(k));
    sel.scores.reserve(static_cast<size_t>(k));
    for (const int64_t i : sel.indices) {
        sel.scores.push_back(scores[static_cast<size_t>(i)]);
        ++pool.selection_counts[static_cast<size_t>(i)];
    }
    return sel;
}

Tensor make_static_prompts(int64_t k, int64_t d, Rng& rng) {
    if (k < 1) throw ValueError("static prompts: k must be at least 1");
    return Tensor::randn({k, d}, rng, 0.02, /*requires_grad=*/true);
}

namespace {

// CLS row + k prompt rows. The selection indices are constants in the graph;
// gradients flow only through the gathered entries.
EmbeddingSequence build_filled_side(Modality modality, const Tensor& cls_row,
                                    const Tensor& prompt_rows) {
    EmbeddingSequence seq;
    seq.modality = modality;
    seq.mat = ops::concat_rows({cls_row, prompt_rows});
    seq.prov.assign(static_cast<size_t>(seq.mat.dim(0)), Provenance::prompt);
    seq.prov.front() = Provenance::cls;
    return seq;
}

}  // namespace

UnifiedInput unify_input(std::optional<EmbeddingSequence> vision,
                         std::optional<EmbeddingSequence> language, UnifyContext& ctx) {
    if (!vision && !language) throw ValueError("unify_input: both sides absent");

    UnifiedInput out;
    if (vision && language) {
        out.kind = InputCase::pair;
        out.vision_seq = std::move(*vision);
        out.language_seq = std::move(*language);
        return out;
    }

    if (vision) {
        out.kind = InputCase::image_only;
        out.vision_seq = std::move(*vision);
        Tensor cls_row = ops::gather_rows(ctx.language_tok, {kClsId});
        if (ctx.mode == PromptMode::pool) {
            const auto q = pool_query(out.vision_seq, ctx.pooling);
            auto sel = select_prompts(*ctx.language_pool, q, ctx.k);
            Tensor rows = ops::gather_rows(ctx.language_pool->entries, sel.indices);
            out.language_seq = build_filled_side(Modality::language, cls_row, rows);
            out.language_selection = std::move(sel);
        } else {
            out.language_seq = build_filled_side(Modality::language, cls_row, ctx.static_language);
        }
        return out;
    }

    out.kind = InputCase::text_only;
    out.language_seq = std::move(*language);
    if (ctx.mode == PromptMode::pool) {
        const auto q = pool_query(out.language_seq, ctx.pooling);
        auto sel = select_prompts(*ctx.vision_pool, q, ctx.k);
        Tensor rows = ops::gather_rows(ctx.vision_pool->entries, sel.indices);
        out.vision_seq = build_filled_side(Modality::vision, ctx.vision_cls, rows);
        out.vision_selection = std::move(sel);
    } else {
        out.vision_seq = build_filled_side(Modality::vision, ctx.vision_cls, ctx.static_vision);
    }
    return out;
}

}  // namespace ptu
