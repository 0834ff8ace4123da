#pragma once

// Small hand-built corpora shared by several suites.

#include <random>
#include <string>
#include <vector>

#include "ciea/document_encoder.hpp"
#include "ciea/pipeline.hpp"
#include "ciea/synthetic.hpp"
#include "ciea/trainer.hpp"

namespace ciea::oracle {

inline ModelConfig tiny_model_config(std::size_t vocab_size) {
    ModelConfig c;
    c.encoder.vocab_size = vocab_size;
    c.encoder.hidden_dim = 8;
    c.encoder.layers = 2;
    c.encoder.heads = 2;
    c.encoder.ffn_dim = 12;
    c.encoder.max_len = 16;
    c.visual.raw_dim = 5;
    c.visual.clip_dim = 6;
    return c;
}

inline PatchGrid random_patches(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    std::normal_distribution<double> n(0.0, 1.0);
    PatchGrid g;
    g.rows = rows;
    g.cols = cols;
    g.values.resize(rows * cols);
    for (double& v : g.values) v = n(rng);
    return g;
}

/// Four image-text documents and two queries that each share a two-token
/// phrase with their positive's caption.
struct TinyBatch {
    std::vector<Document> corpus;
    std::vector<QueryRecord> queries;
    std::size_t vocab_size = 14;
};

inline TinyBatch tiny_batch(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    TinyBatch b;
    const std::vector<TokenSequence> captions = {{4, 5, 6, 7}, {8, 9, 4}, {10, 11, 12}, {13, 5, 9, 10}};
    for (std::size_t i = 0; i < captions.size(); ++i) {
        Document d;
        d.id = "d" + std::to_string(i);
        d.text = captions[i];
        d.patches = random_patches(rng, 3, 5);
        b.corpus.push_back(d);
    }
    b.queries.push_back({"q0", "", {4, 5, 12}, {"d0"}});
    b.queries.push_back({"q1", "", {8, 9, 13}, {"d1"}});
    return b;
}

/// Synthetic documents whose queries repeat a caption-unique word pair, so
/// every query is answerable from text alone.
struct TokenizedSet {
    std::vector<Document> corpus;
    std::vector<QueryRecord> queries;
    std::size_t vocab_size = 0;
};

inline TokenizedSet separable_set(std::size_t n_docs, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n_docs = n_docs;
    spec.complementary_fraction = 0.0;
    auto ds = gen_synthetic(spec, seed);
    TokenizedSet out{std::move(ds.corpus), std::move(ds.queries), 0};
    out.vocab_size = prepare_text(out.corpus, out.queries, RunConfig{}).size();
    return out;
}

}  // namespace ciea::oracle
