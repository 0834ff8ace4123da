#pragma once

/// \file extractor.hpp
/// \brief Complementary information extractor: patch-vs-text difference
/// weights and difference-re-weighted self-attention over image patches.
///
/// For patch j with projected embedding p_j and caption token embeddings t_c:
///
///     r_j = -max_c cos(p_j, t_c)          w_j = (1 + r_j) / 2
///
/// and the re-weighted patches are
///
///     softmax(((P Wq)(P Wk)^T (.) w) / sqrt(d)) (P Wv)
///
/// where (.) scales key column j of the logit matrix by w_j.

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "ciea/checkpoint.hpp"
#include "ciea/tensor.hpp"

namespace ciea {

/// How patch weights are derived from the text comparison.
enum class WeightsMode {
    dissimilar,  ///< w = (1 + r) / 2: patches unlike the text keep their logits
    similar,     ///< w = (1 - r) / 2: patches like the text keep their logits
    uniform,     ///< w = 1: plain self-attention, no text comparison
};

inline std::string to_string(WeightsMode m) {
    switch (m) {
        case WeightsMode::dissimilar: return "dissimilar";
        case WeightsMode::similar: return "similar";
        case WeightsMode::uniform: return "uniform";
    }
    return "?";
}

inline WeightsMode weights_mode_from_string(const std::string& s) {
    if (s == "dissimilar") return WeightsMode::dissimilar;
    if (s == "similar") return WeightsMode::similar;
    if (s == "uniform") return WeightsMode::uniform;
    throw ContractError("unknown weights_mode \"" + s + "\" (expected dissimilar, similar or uniform)");
}

struct DifferenceWeights {
    Tensor r;  ///< length l_i, in [-1, 1]; undefined in uniform mode or without text
    Tensor w;  ///< length l_i, in [0, 1]
};

/// Difference measurement of every patch against the caption tokens.
/// With no text tokens every patch counts as complementary (w = 1).
inline DifferenceWeights patch_differences(Tape& tape, const Tensor& img_emb, const Tensor& text_emb,
                                           WeightsMode mode = WeightsMode::dissimilar) {
    detail::require_matrix(img_emb, "patch_differences");
    const std::size_t li = img_emb.shape()[0];
    if (mode == WeightsMode::uniform || !text_emb.defined() || text_emb.shape()[0] == 0) {
        return {Tensor{}, Tensor::filled({li}, 1.0)};
    }
    detail::require_matrix(text_emb, "patch_differences");
    if (text_emb.shape()[1] != img_emb.shape()[1]) {
        throw DimensionError("patch_differences: patch width " + std::to_string(img_emb.shape()[1]) +
                             " vs token width " + std::to_string(text_emb.shape()[1]));
    }
    Tensor cos = matmul(tape, normalize_rows(tape, img_emb), transpose(tape, normalize_rows(tape, text_emb)));
    Tensor r = scale(tape, row_max(tape, cos), -1.0);
    Tensor w = affine(tape, r, mode == WeightsMode::dissimilar ? 0.5 : -0.5, 0.5);
    return {r, w};
}

struct ExtractorParams {
    Tensor w_query, w_key, w_value;  // d x d

    /// W_Q and W_K random, W_V the identity, so the layer starts by mixing
    /// projected patches without moving them out of the token space.
    static ExtractorParams init(std::size_t d, std::mt19937_64& rng) {
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        std::vector<double> eye(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
        Tensor value = Tensor::matrix(d, d, std::move(eye), true);
        return {random_param(rng, {d, d}, s), random_param(rng, {d, d}, s), value};
    }

    void collect(ParamList& out) const {
        out.push_back({"extractor.w_query", w_query});
        out.push_back({"extractor.w_key", w_key});
        out.push_back({"extractor.w_value", w_value});
    }
};

/// Single-head attention over patches whose logits are scaled per key by w.
inline Tensor reweighted_attention(Tape& tape, const Tensor& img_emb, const Tensor& w, const ExtractorParams& params) {
    detail::require_matrix(img_emb, "reweighted_attention");
    const std::size_t li = img_emb.shape()[0], d = img_emb.shape()[1];
    if (w.size() != li) {
        throw ContractError("reweighted_attention: " + std::to_string(w.size()) + " weights for " +
                            std::to_string(li) + " patches");
    }
    Tensor q = matmul(tape, img_emb, params.w_query);
    Tensor k = matmul(tape, img_emb, params.w_key);
    Tensor v = matmul(tape, img_emb, params.w_value);
    Tensor logits = matmul(tape, q, transpose(tape, k));
    logits = mul(tape, logits, reshape(tape, w, {1, li}));
    logits = scale(tape, logits, 1.0 / std::sqrt(static_cast<double>(d)));
    return matmul(tape, softmax_rows(tape, logits), v);
}

}  // namespace ciea
