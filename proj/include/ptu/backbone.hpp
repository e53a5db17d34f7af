#pragma once

#include <vector>

#include "ptu/ops.hpp"
#include "ptu/prompts.hpp"
#include "ptu/tensor.hpp"

namespace ptu {

struct BackboneConfig {
    int64_t dim = 64;
    int64_t heads = 4;
    int64_t layers_vision = 2;
    int64_t layers_language = 2;
    int64_t layers_fusion = 2;
    double ffn_mult = 4.0;
    int64_t max_len_vision = 17;
    int64_t max_len_language = 34;
    double ln_eps = 1e-5;

    int64_t ffn_dim() const { return static_cast<int64_t>(ffn_mult * static_cast<double>(dim)); }
    void validate() const;
};

struct LayerParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct BackboneParams {
    BackboneConfig config;
    std::vector<LayerParams> vision;
    std::vector<LayerParams> language;
    std::vector<LayerParams> fusion;
    Tensor type_vision, type_language;  // [D], added per side before fusion
    Tensor final_ln_g, final_ln_b;
};

// softmax(Q K^T / sqrt(D_k)) V with masked key positions receiving zero
// probability. The oracle the fused packed_mha primitive is checked against.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::vector<bool>& key_mask = {});

// Pre-norm multi-head self-attention + residual, then pre-norm GELU FFN +
// residual, over a packed batch (sample s occupies rows
// [offsets[s], offsets[s+1])). pad_mask marks key rows to exclude.
Tensor transformer_layer(const Tensor& x, const LayerParams& p, int64_t heads,
                         const std::vector<int64_t>& offsets,
                         const std::vector<bool>& pad_mask = {}, double ln_eps = 1e-5);

// Single-sample convenience overload.
Tensor transformer_layer(const Tensor& x, const LayerParams& p, int64_t heads,
                         const std::vector<bool>& pad_mask = {}, double ln_eps = 1e-5);

struct BackboneOutput {
    Tensor Zv;       // (N_v + 1) x D
    Tensor Zl;       // L_l x D
    Tensor zv_cls;   // 1 x D, row 0 of Zv
    Tensor zl_cls;   // 1 x D, row 0 of Zl
};

struct BatchBackboneOutput {
    Tensor Zv;                          // packed vision rows
    std::vector<int64_t> v_offsets;     // per-sample offsets into Zv
    Tensor Zl;                          // packed language rows
    std::vector<int64_t> l_offsets;
    Tensor zv_cls;                      // B x D
    Tensor zl_cls;                      // B x D
};

// Vision stack over the vision side, language stack over the language side,
// then single-stream fusion over the per-sample concatenation, split back by
// the original lengths. All samples run as one packed graph.
BatchBackboneOutput backbone_forward_batch(const std::vector<UnifiedInput>& inputs,
                                           const BackboneParams& params);

BackboneOutput backbone_forward(const UnifiedInput& input, const BackboneParams& params);

}  // namespace ptu
