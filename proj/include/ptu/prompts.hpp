#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ptu/embeddings.hpp"
#include "ptu/rng.hpp"
#include "ptu/tensor.hpp"

namespace ptu {

enum class PromptMode { static_prompts, pool };
enum class PoolingMode { average, max };

// Learnable bank of candidate prompt vectors for one modality. Entries are
// leaf parameters; gradients reach an entry only when it is selected.
struct PromptPool {
    Tensor entries;  // P x D
    Modality modality = Modality::language;
    std::vector<uint64_t> selection_counts;

    int64_t size() const { return entries.dim(0); }
};

PromptPool make_prompt_pool(int64_t pool_size, int64_t d, Modality modality, Rng& rng);

struct PromptSelection {
    std::vector<int64_t> indices;  // distinct, descending score, ties to lower index
    std::vector<double> scores;    // non-increasing
    std::vector<double> query;     // D
};

enum class InputCase { image_only, text_only, pair };

// The three-case model input after prompt filling. In the pair case no
// position has prompt provenance; a filled side is CLS + k prompts.
struct UnifiedInput {
    EmbeddingSequence vision_seq;
    EmbeddingSequence language_seq;
    InputCase kind = InputCase::pair;
    std::optional<PromptSelection> vision_selection;
    std::optional<PromptSelection> language_selection;
};

// Pools over positions with provenance `real` only.
std::vector<double> pool_query(const EmbeddingSequence& seq, PoolingMode mode);

// Top-k pool entries by dot product with the query, descending, ties broken
// by lower index. Updates the pool's selection counts.
PromptSelection select_prompts(PromptPool& pool, const std::vector<double>& query, int64_t k);

// k learnable vectors, zero-mean normal with std 0.02, used identically for
// every input in static mode.
Tensor make_static_prompts(int64_t k, int64_t d, Rng& rng);

// Everything unify_input needs beyond the input sequences.
struct UnifyContext {
    PromptPool* vision_pool = nullptr;
    PromptPool* language_pool = nullptr;
    Tensor static_vision;    // k x D, static mode
    Tensor static_language;  // k x D, static mode
    Tensor vision_cls;       // 1 x D
    Tensor language_tok;     // V x D; the [CLS] row seeds the filled language side
    PromptMode mode = PromptMode::pool;
    PoolingMode pooling = PoolingMode::average;
    int64_t k = 4;
};

UnifiedInput unify_input(std::optional<EmbeddingSequence> vision,
                         std::optional<EmbeddingSequence> language, UnifyContext& ctx);

}  // namespace ptu
