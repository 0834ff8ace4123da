#pragma once

/// \file alignment.hpp
/// \brief Contrastive warm-up of the projector against the token embedding
/// table, used in place of a pretrained projector.
///
/// A caption j and an image i are scored by fine-grained token/patch matching,
///
///     s(j, i) = mean over caption tokens t of  max over patches p of cos(Emb(t), Proj(CLIP(p)))
///
/// and each caption is contrasted against the other images of its batch.
/// Only the projector is updated.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "ciea/document_encoder.hpp"
#include "ciea/optimizer.hpp"

namespace ciea {

struct AlignConfig {
    std::size_t steps = 0;
    std::size_t batch_size = 16;
    double learning_rate = 1e-2;
    double temperature = 0.1;
    std::uint64_t seed = 29;

    void validate() const {
        if (batch_size < 2) throw ContractError("align: batch_size must be at least 2");
        if (!(learning_rate > 0.0) || !(temperature > 0.0)) throw ContractError("align: learning_rate and temperature must be positive");
    }
};

struct AlignResult {
    std::size_t steps = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
};

/// Caption-to-image scores for a batch: entry (j, i) scores caption j
/// against image i.
inline std::vector<std::vector<Tensor>> token_patch_scores(Tape& tape, const std::vector<const Document*>& docs,
                                                          const Model& model) {
    std::vector<Tensor> patches;
    std::vector<std::size_t> widths;
    for (const auto* d : docs) {
        patches.push_back(normalize_rows(tape, project(tape, featurize(*d->patches, model.frozen), model.projector)));
        widths.push_back(patches.back().shape()[0]);
    }
    Tensor all_t = transpose(tape, concat(tape, patches));
    std::vector<std::vector<Tensor>> scores(docs.size());
    for (std::size_t j = 0; j < docs.size(); ++j) {
        Tensor words = normalize_rows(tape, token_embeddings(tape, docs[j]->text, model.encoder));
        Tensor sims = matmul(tape, words, all_t);
        const double inv_len = 1.0 / static_cast<double>(docs[j]->text.size());
        std::size_t col = 0;
        for (std::size_t i = 0; i < docs.size(); ++i) {
            Tensor best = row_max(tape, slice_cols(tape, sims, col, widths[i]));
            scores[j].push_back(scale(tape, sum(tape, best), inv_len));
            col += widths[i];
        }
    }
    return scores;
}

inline AlignResult align_projector(Model& model, const std::vector<Document>& corpus, const AlignConfig& config) {
    config.validate();
    AlignResult result;
    if (config.steps == 0) return result;
    std::vector<const Document*> pool;
    for (const auto& d : corpus)
        if (d.multimodal() && !d.text.empty()) pool.push_back(&d);
    if (pool.size() < 2) throw ContractError("align: need at least two captioned images");

    ParamList params;
    model.projector.collect(params);
    AdamW opt;
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();
    const std::size_t b = std::min(config.batch_size, pool.size());
    for (std::size_t step = 0; step < config.steps; ++step) {
        if (cursor + b > order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        std::vector<const Document*> batch;
        for (std::size_t k = 0; k < b; ++k) batch.push_back(pool[order[cursor + k]]);
        cursor += b;

        Tape tape;
        auto scores = token_patch_scores(tape, batch, model);
        std::vector<Tensor> losses;
        for (std::size_t j = 0; j < b; ++j) {
            std::vector<Tensor> row;
            for (const auto& s : scores[j]) row.push_back(scale(tape, s, 1.0 / config.temperature));
            losses.push_back(add(tape, logsumexp(tape, concat(tape, row)), scale(tape, row[j], -1.0)));
        }
        Tensor loss = mean_of(tape, losses);
        model.zero_grad();
        backward(loss, tape);
        opt.step(params, config.learning_rate);
        if (step == 0) result.first_loss = loss.item();
        result.last_loss = loss.item();
        ++result.steps;
    }
    model.zero_grad();
    return result;
}

}  // namespace ciea
