#include "ptu/embeddings.hpp"

#include "ptu/ops.hpp"

namespace ptu {

PatchGrid patchify(const std::vector<double>& image, int64_t h, int64_t w, int64_t c, int64_t p) {
    if (h <= 0 || w <= 0 || c <= 0 || p <= 0)
        throw ShapeError("patchify: non-positive dimension");
    if (static_cast<int64_t>(image.size()) != h * w * c)
        throw ShapeError("patchify: image buffer size " + std::to_string(image.size()) +
                         " does not match " + std::to_string(h) + "x" + std::to_string(w) + "x" +
                         std::to_string(c));
    if (h % p != 0 || w % p != 0)
        throw ShapeError("patchify: patch size P=" + std::to_string(p) + " does not divide H=" +
                         std::to_string(h) + ", W=" + std::to_string(w));

    PatchGrid grid;
    grid.grid_h = h / p;
    grid.grid_w = w / p;
    grid.n_patches = grid.grid_h * grid.grid_w;
    grid.patch_len = p * p * c;
    grid.values.resize(static_cast<size_t>(grid.n_patches * grid.patch_len));

    size_t at = 0;
    for (int64_t pr = 0; pr < grid.grid_h; ++pr)
        for (int64_t pc = 0; pc < grid.grid_w; ++pc)
            for (int64_t r = 0; r < p; ++r)
                for (int64_t cc = 0; cc < p; ++cc)
                    for (int64_t ch = 0; ch < c; ++ch)
                        grid.values[at++] =
                            image[static_cast<size_t>(((pr * p + r) * w + pc * p + cc) * c + ch)];
    return grid;
}

EmbeddingSequence embed_text(const TokenSequence& tokens, const TextEmbedParams& params) {
    const int64_t v = params.tok.dim(0);
    for (const int64_t id : tokens.ids)
        if (id < 0 || id >= v)
            throw ValueError("token id " + std::to_string(id) + " out of vocabulary of size " +
                             std::to_string(v));
    const int64_t len = tokens.length();
    if (len > params.pos.dim(0))
        throw ShapeError("text sequence of length " + std::to_string(len) +
                         " exceeds position table of " + std::to_string(params.pos.dim(0)));

    EmbeddingSequence seq;
    seq.modality = Modality::language;
    seq.mat = ops::add(ops::gather_rows(params.tok, tokens.ids),
                       ops::slice_rows(params.pos, 0, len));
    seq.prov.assign(static_cast<size_t>(len), Provenance::real);
    seq.prov.front() = Provenance::cls;
    seq.prov.back() = Provenance::sep;
    for (size_t i = 0; i < tokens.ids.size(); ++i)
        if (tokens.ids[i] == kPadId) seq.prov[i] = Provenance::pad;
    return seq;
}

EmbeddingSequence embed_image(const PatchGrid& grid, const VisionEmbedParams& params) {
    if (grid.patch_len != params.proj_w.dim(0))
        throw ShapeError("patch length " + std::to_string(grid.patch_len) +
                         " does not match projection input dimension " +
                         std::to_string(params.proj_w.dim(0)));
    const int64_t len = grid.n_patches + 1;
    if (len > params.pos.dim(0))
        throw ShapeError("image sequence of length " + std::to_string(len) +
                         " exceeds position table of " + std::to_string(params.pos.dim(0)));

    Tensor patches = Tensor::from({grid.n_patches, grid.patch_len}, grid.values);
    Tensor projected = ops::add_rowvec(ops::matmul(patches, params.proj_w), params.proj_b);

    EmbeddingSequence seq;
    seq.modality = Modality::vision;
    seq.mat = ops::add(ops::concat_rows({params.cls, projected}),
                       ops::slice_rows(params.pos, 0, len));
    seq.prov.assign(static_cast<size_t>(len), Provenance::real);
    seq.prov.front() = Provenance::cls;
    return seq;
}

void check_position_rows_distinct(const Tensor& pos, const std::string& name) {
    const int64_t rows = pos.dim(0), cols = pos.dim(1);
    const auto& v = pos.values();
    for (int64_t a = 0; a < rows; ++a)
        for (int64_t b = a + 1; b < rows; ++b) {
            bool equal = true;
            for (int64_t c = 0; c < cols && equal; ++c)
                equal = v[static_cast<size_t>(a * cols + c)] == v[static_cast<size_t>(b * cols + c)];
            if (equal)
                throw ValueError(name + ": position rows " + std::to_string(a) + " and " +
                                 std::to_string(b) + " are identical");
        }
}

}  // namespace ptu
