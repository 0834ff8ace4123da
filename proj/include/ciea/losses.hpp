#pragma once

/// \file losses.hpp
/// \brief Masked "image query" construction and the two contrastive losses.

#include <cmath>
#include <string>
#include <vector>

#include "ciea/errors.hpp"
#include "ciea/tensor.hpp"
#include "ciea/vocab.hpp"

namespace ciea {

struct Span {
    std::size_t start = 0;
    std::size_t length = 0;

    friend bool operator==(const Span&, const Span&) = default;
};

/// Query sub-sequences of length >= min_len that occur verbatim in the
/// document text. Scans left to right and takes the longest match at each
/// position, so spans never overlap.
inline std::vector<Span> find_overlap_segments(const TokenSequence& query, const TokenSequence& doc_text,
                                               std::size_t min_len = 2) {
    if (min_len == 0) throw ContractError("find_overlap_segments: min_len must be at least 1");
    std::vector<Span> spans;
    std::size_t i = 0;
    while (i < query.size()) {
        std::size_t best = 0;
        for (std::size_t s = 0; s < doc_text.size(); ++s) {
            std::size_t len = 0;
            while (i + len < query.size() && s + len < doc_text.size() && query[i + len] == doc_text[s + len]) ++len;
            best = std::max(best, len);
        }
        if (best >= min_len) {
            spans.push_back({i, best});
            i += best;
        } else {
            ++i;
        }
    }
    return spans;
}

struct MaskedQuery {
    TokenSequence tokens;
    std::vector<Span> masked_spans;

    bool fully_masked() const {
        return std::all_of(tokens.begin(), tokens.end(), [](TokenId t) { return t == kMaskId; });
    }
};

inline MaskedQuery mask_query(const TokenSequence& query, const std::vector<Span>& spans) {
    MaskedQuery out{query, spans};
    std::vector<bool> taken(query.size(), false);
    for (const auto& s : spans) {
        if (s.length == 0 || s.start + s.length > query.size()) {
            throw ContractError("mask span (" + std::to_string(s.start) + "," + std::to_string(s.length) +
                                ") outside a query of length " + std::to_string(query.size()));
        }
        for (std::size_t i = s.start; i < s.start + s.length; ++i) {
            if (taken[i]) throw ContractError("mask spans overlap at position " + std::to_string(i));
            taken[i] = true;
            out.tokens[i] = kMaskId;
        }
    }
    return out;
}

struct LossConfig {
    double temperature = 0.01;
    double lambda = 0.0011;
    std::size_t negatives = 1;
    std::size_t min_mask_len = 2;
    /// Keep the image-query term for queries masked down to nothing.
    bool comp_on_fully_masked = false;

    void validate() const {
        if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
        if (!(lambda >= 0.0)) throw ContractError("lambda must be non-negative");
        if (negatives == 0) throw ContractError("negatives per query must be at least 1");
        if (min_mask_len == 0) throw ContractError("min_mask_len must be at least 1");
    }
};

/// -log( e^{cos(q,d+)/tau} / (e^{cos(q,d+)/tau} + sum_neg e^{cos(q,d-)/tau}) ),
/// evaluated as logsumexp(all scores) - positive score.
inline Tensor info_nce(Tape& tape, const Tensor& query, const Tensor& positive, const std::vector<Tensor>& negatives,
                       double temperature) {
    if (!(temperature > 0.0)) throw ContractError("contrastive loss: temperature must be positive");
    if (negatives.empty()) throw ContractError("contrastive loss: at least one negative is required");
    std::vector<Tensor> scores;
    scores.reserve(negatives.size() + 1);
    scores.push_back(scale(tape, cosine(tape, query, positive), 1.0 / temperature));
    for (const auto& n : negatives) scores.push_back(scale(tape, cosine(tape, query, n), 1.0 / temperature));
    Tensor lse = logsumexp(tape, concat(tape, scores));
    return add(tape, lse, scale(tape, scores[0], -1.0));
}

/// Query/document contrastive loss.
inline Tensor loss_contrastive(Tape& tape, const Tensor& q, const Tensor& pos, const std::vector<Tensor>& negs,
                               double temperature) {
    return info_nce(tape, q, pos, negs, temperature);
}

/// Masked query against image-only document representations.
inline Tensor loss_comp(Tape& tape, const Tensor& masked_q, const Tensor& pos_img, const std::vector<Tensor>& neg_imgs,
                        double temperature) {
    return info_nce(tape, masked_q, pos_img, neg_imgs, temperature);
}

/// L = L_c + lambda * L_comp.
inline Tensor loss_total(Tape& tape, const Tensor& l_c, const Tensor& l_comp, double lambda) {
    if (l_c.size() != 1 || l_comp.size() != 1) throw ContractError("loss_total expects scalar losses");
    return add(tape, l_c, scale(tape, l_comp, lambda));
}

}  // namespace ciea
