#pragma once

/// \file pipeline.hpp
/// \brief Vocabulary construction, training from a run configuration, and
/// held-out scoring, as used by the CLI and the ablation driver.

#include <string>
#include <vector>

#include "ciea/alignment.hpp"
#include "ciea/config.hpp"
#include "ciea/retrieval.hpp"
#include "ciea/trainer.hpp"

namespace ciea {

/// Vocabulary over document and query texts, then tokenization in place.
inline Vocabulary prepare_text(std::vector<Document>& corpus, std::vector<QueryRecord>& queries, const RunConfig& cfg) {
    std::vector<std::string> texts;
    texts.reserve(corpus.size() + queries.size());
    for (const auto& d : corpus) texts.push_back(d.raw_text);
    for (const auto& q : queries) texts.push_back(q.raw_text);
    Vocabulary vocab = Vocabulary::build(texts, cfg.min_count);
    tokenize_corpus(corpus, vocab, cfg.max_len);
    tokenize_queries(queries, vocab, cfg.max_len);
    return vocab;
}

struct TrainedModel {
    Model model;
    AlignResult align;
    TrainResult train;
};

/// Initialises from `cfg.train_seed`, warms up the projector, splits off the
/// dev queries and trains.
inline TrainedModel train_from_config(const RunConfig& cfg, std::size_t vocab_size, const std::vector<Document>& corpus,
                                      const std::vector<QueryRecord>& queries, const LogSink& sink = {}) {
    TrainedModel out{Model::init(cfg.model(vocab_size), cfg.train_seed), {}, {}};
    out.align = align_projector(out.model, corpus, cfg.align());
    if (sink && out.align.steps > 0) {
        sink({{"align_steps", out.align.steps}, {"first_loss", out.align.first_loss}, {"last_loss", out.align.last_loss}});
    }
    auto split = split_queries(queries, cfg.dev_fraction, cfg.seed);
    if (split.dev.empty()) throw ContractError("dev split is empty; raise dev_fraction or supply more queries");
    out.train = train(out.model, cfg.train(), cfg.loss(), corpus, split.train, split.dev, sink);
    return out;
}

inline MetricSet score_queries(const Model& model, const std::vector<Document>& corpus,
                               const std::vector<QueryRecord>& queries, std::size_t top_k) {
    auto index = EmbeddingIndex::build(encode_corpus(corpus, model));
    return evaluate_runs(search_queries(index, queries, model, top_k), qrels_from_queries(queries));
}

}  // namespace ciea
