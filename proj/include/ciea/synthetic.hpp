#pragma once

/// \file synthetic.hpp
/// \brief Seeded generator for image-text corpora whose queries need
/// information that only the image carries.
///
/// Documents come in groups that share two caption topic words. Each document
/// adds two unique detail words to its caption and hides one "visual concept"
/// word in its patches: the concept's prototype feature vector is rendered
/// into one patch and never written into the caption. Two topic patches render
/// the caption topics, remaining patches are background noise.
///
/// A complementary query names the group topics plus the hidden concept, so
/// only the patches separate the document from its group mates. Any other
/// query names caption words that identify the document on their own.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ciea/data.hpp"
#include "ciea/errors.hpp"

namespace ciea {

struct SyntheticSpec {
    std::size_t n_docs = 2000;
    std::size_t group_size = 20;
    /// Words that appear both as caption topics and as hidden visual concepts.
    std::size_t object_words = 40;
    /// Words that only appear in captions, two per document.
    std::size_t detail_words = 100;
    std::size_t patches_per_doc = 4;
    std::size_t raw_patch_dim = 16;
    double complementary_fraction = 0.6;
    double text_only_fraction = 0.0;
    double patch_noise = 0.1;

    std::size_t vocab_size() const noexcept { return object_words + detail_words; }
};

struct SyntheticDataset {
    std::vector<Document> corpus;
    std::vector<QueryRecord> queries;
    Qrels qrels;
    /// Per query: whether it names a patch-only concept.
    std::vector<bool> complementary;
};

namespace detail {

/// Pronounceable, collision-free word for an index.
inline std::string synthetic_word(std::size_t index) {
    static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
    constexpr std::size_t kSyllables = 14 * 5;
    std::string w;
    std::size_t x = index;
    int n = 0;
    do {
        w += kOnsets[(x % kSyllables) / 5];
        w += kVowels[x % 5];
        x /= kSyllables;
        ++n;
    } while (x > 0 || n < 2);
    return w;
}

inline std::vector<std::pair<std::size_t, std::size_t>> all_pairs(std::size_t n) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    return pairs;
}

inline std::string padded_id(char prefix, std::size_t i, std::size_t total) {
    std::string digits = std::to_string(i);
    const std::size_t width = std::max<std::size_t>(5, std::to_string(total).size());
    return std::string(1, prefix) + std::string(width - std::min(width, digits.size()), '0') + digits;
}

}  // namespace detail

inline SyntheticDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.n_docs == 0 || spec.group_size == 0) throw ContractError("gen_synthetic: empty corpus requested");
    if (spec.complementary_fraction < 0.0 || spec.complementary_fraction > 1.0) {
        throw ContractError("gen_synthetic: complementary_fraction must lie in [0,1]");
    }
    if (spec.text_only_fraction < 0.0 || spec.text_only_fraction > 1.0) {
        throw ContractError("gen_synthetic: text_only_fraction must lie in [0,1]");
    }
    if (spec.patches_per_doc < 3) throw ContractError("gen_synthetic: need at least 3 patches per document");
    if (spec.raw_patch_dim == 0) throw ContractError("gen_synthetic: raw_patch_dim must be positive");
    const std::size_t groups = (spec.n_docs + spec.group_size - 1) / spec.group_size;
    if (spec.object_words < 2 || spec.object_words * (spec.object_words - 1) / 2 < groups) {
        throw ContractError("gen_synthetic: " + std::to_string(groups) + " groups need more than " +
                            std::to_string(spec.object_words) + " object words");
    }
    if (spec.group_size + 2 > spec.object_words) {
        throw ContractError("gen_synthetic: more visual concepts per group than object words");
    }
    if (spec.detail_words < 2 || spec.detail_words * (spec.detail_words - 1) / 2 < spec.n_docs) {
        throw ContractError("gen_synthetic: too few detail words for unique captions");
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<std::string> objects, details;
    for (std::size_t i = 0; i < spec.object_words; ++i) objects.push_back(detail::synthetic_word(i));
    for (std::size_t i = 0; i < spec.detail_words; ++i)
        details.push_back(detail::synthetic_word(spec.object_words + i));

    std::vector<std::vector<double>> prototypes(spec.object_words, std::vector<double>(spec.raw_patch_dim));
    for (auto& p : prototypes)
        for (double& x : p) x = normal(rng);

    auto topic_pairs = detail::all_pairs(spec.object_words);
    std::shuffle(topic_pairs.begin(), topic_pairs.end(), rng);
    auto detail_pairs = detail::all_pairs(spec.detail_words);
    std::shuffle(detail_pairs.begin(), detail_pairs.end(), rng);

    SyntheticDataset out;
    out.corpus.reserve(spec.n_docs);
    for (std::size_t g = 0; g < groups; ++g) {
        const auto [t1, t2] = topic_pairs[g];
        std::vector<std::size_t> concepts;
        for (std::size_t o = 0; o < spec.object_words; ++o)
            if (o != t1 && o != t2) concepts.push_back(o);
        std::shuffle(concepts.begin(), concepts.end(), rng);

        for (std::size_t k = 0; k < spec.group_size; ++k) {
            const std::size_t doc_index = g * spec.group_size + k;
            if (doc_index >= spec.n_docs) break;
            const auto [u1, u2] = detail_pairs[doc_index];
            const std::size_t concept_word = concepts[k];

            Document d;
            d.id = detail::padded_id('d', doc_index, spec.n_docs);
            d.raw_text = objects[t1] + " " + objects[t2] + " " + details[u1] + " " + details[u2];
            const bool text_only = unit(rng) < spec.text_only_fraction;
            if (!text_only) {
                PatchGrid grid;
                grid.rows = spec.patches_per_doc;
                grid.cols = spec.raw_patch_dim;
                std::vector<std::vector<double>> rows;
                for (std::size_t src : {t1, t2, concept_word}) {
                    auto r = prototypes[src];
                    for (double& x : r) x += spec.patch_noise * normal(rng);
                    rows.push_back(std::move(r));
                }
                while (rows.size() < spec.patches_per_doc) {
                    std::vector<double> r(spec.raw_patch_dim);
                    for (double& x : r) x = spec.patch_noise * normal(rng);
                    rows.push_back(std::move(r));
                }
                std::shuffle(rows.begin(), rows.end(), rng);
                for (auto& r : rows) grid.values.insert(grid.values.end(), r.begin(), r.end());
                d.patches = std::move(grid);
            }

            QueryRecord q;
            q.qid = detail::padded_id('q', doc_index, spec.n_docs);
            const bool complementary = !text_only && unit(rng) < spec.complementary_fraction;
            if (complementary) {
                q.raw_text = objects[t1] + " " + objects[t2] + " " + objects[concept_word];
            } else {
                q.raw_text = objects[t2] + " " + details[u1] + " " + details[u2];
            }
            q.positives = {d.id};
            out.complementary.push_back(complementary);
            out.corpus.push_back(std::move(d));
            out.queries.push_back(std::move(q));
        }
    }
    out.qrels = qrels_from_queries(out.queries);
    return out;
}

}  // namespace ciea
