#pragma once

#include <vector>

#include "ptu/tensor.hpp"
#include "ptu/vocab.hpp"

namespace ptu {

enum class Provenance { cls, real, sep, prompt, pad };
enum class Modality { vision, language };

// One modality's D-dim vector sequence with per-position provenance.
// Exactly one cls position, at index 0.
struct EmbeddingSequence {
    Tensor mat;  // L x D
    std::vector<Provenance> prov;
    Modality modality = Modality::language;
    int64_t length() const { return static_cast<int64_t>(prov.size()); }
};

struct PatchGrid {
    std::vector<double> values;  // n_patches x patch_len, row-major
    int64_t n_patches = 0;
    int64_t patch_len = 0;
    int64_t grid_h = 0;  // H / P
    int64_t grid_w = 0;  // W / P
};

// Image is H x W x C row-major, channel-last. Patches are emitted top-left to
// bottom-right, each flattened channel-last. P must divide H and W.
PatchGrid patchify(const std::vector<double>& image, int64_t h, int64_t w, int64_t c, int64_t p);

struct TextEmbedParams {
    Tensor tok;  // V x D token embeddings (specials included)
    Tensor pos;  // max positions x D learned position embeddings
};

struct VisionEmbedParams {
    Tensor proj_w;  // patch_len x D
    Tensor proj_b;  // D
    Tensor cls;     // 1 x D
    Tensor pos;     // (max patches + 1) x D
};

// Token lookup plus learned position embeddings; output length N_l + 2.
EmbeddingSequence embed_text(const TokenSequence& tokens, const TextEmbedParams& params);

// Linear patch projection, CLS prepended, position embeddings added;
// output length N_v + 1.
EmbeddingSequence embed_image(const PatchGrid& grid, const VisionEmbedParams& params);

// Init-time injectivity guard: no two rows of a position table may be equal.
void check_position_rows_distinct(const Tensor& pos, const std::string& name);

}  // namespace ptu
