#pragma once

/// \file retrieval.hpp
/// \brief Exact top-k search over unit-norm embeddings, ranking metrics,
/// TREC run files and the nearest-vocabulary-token probe.

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ciea/data.hpp"
#include "ciea/document_encoder.hpp"
#include "ciea/errors.hpp"

namespace ciea {

class EmbeddingIndex {
public:
    /// Rows are re-ordered by ascending id. Every row must be unit-norm (1e-6).
    static EmbeddingIndex build(const EncodedCorpus& enc) {
        std::vector<std::size_t> order(enc.ids.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return enc.ids[a] < enc.ids[b]; });
        EmbeddingIndex idx;
        idx.dim_ = enc.dim;
        for (std::size_t k = 0; k < order.size(); ++k) {
            const auto& id = enc.ids[order[k]];
            if (k > 0 && id == idx.ids_.back()) throw ReferentialError("duplicate document id \"" + id + "\" in index");
            auto row = enc.row(order[k]);
            double n = 0.0;
            for (double x : row) n += x * x;
            if (std::abs(std::sqrt(n) - 1.0) > 1e-6) {
                throw ContractError("index row for \"" + id + "\" is not unit-norm");
            }
            idx.ids_.push_back(id);
            idx.matrix_.insert(idx.matrix_.end(), row.begin(), row.end());
        }
        return idx;
    }

    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    std::span<const double> row(std::size_t i) const { return {matrix_.data() + i * dim_, dim_}; }

private:
    std::vector<std::string> ids_;
    std::vector<double> matrix_;
    std::size_t dim_ = 0;
};

struct ScoredDoc {
    std::string docid;
    double score = 0.0;

    friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

struct RankedList {
    std::string qid;
    std::vector<ScoredDoc> hits;

    friend bool operator==(const RankedList&, const RankedList&) = default;
};

/// Score descending, then docid ascending.
inline bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.docid < b.docid;
}

/// Dot products of every row with `query`, index order.
inline std::vector<double> score_all(const EmbeddingIndex& index, std::span<const double> query) {
    if (query.size() != index.dim()) throw DimensionError("query width does not match index");
    std::vector<double> scores(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        auto r = index.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * query[j];
        scores[i] = s;
    }
    return scores;
}

/// Exact k-best documents. k larger than the index returns everything.
inline RankedList search_topk(const EmbeddingIndex& index, std::span<const double> query, std::size_t k,
                              const std::string& qid = {}) {
    if (k == 0) throw ContractError("search_topk: k must be at least 1");
    auto scores = score_all(index, query);
    std::vector<ScoredDoc> all;
    all.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) all.push_back({index.ids()[i], scores[i]});
    const std::size_t n = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), ranks_before);
    all.resize(n);
    return {qid, std::move(all)};
}

// ---------------------------------------------------------------------------
// Metrics (binary relevance)
// ---------------------------------------------------------------------------

inline double mrr_at_k(const RankedList& run, const std::set<std::string>& relevant, std::size_t k) {
    const std::size_t n = std::min(k, run.hits.size());
    for (std::size_t i = 0; i < n; ++i)
        if (relevant.count(run.hits[i].docid)) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
}

inline double recall_at_k(const RankedList& run, const std::set<std::string>& relevant, std::size_t k) {
    if (relevant.empty()) return 0.0;
    const std::size_t n = std::min(k, run.hits.size());
    std::size_t found = 0;
    for (std::size_t i = 0; i < n; ++i) found += relevant.count(run.hits[i].docid);
    return static_cast<double>(found) / static_cast<double>(relevant.size());
}

/// Gain 1 per relevant hit, discount 1/log2(rank+1), ideal DCG from
/// min(|relevant|, k) leading hits.
inline double ndcg_at_k(const RankedList& run, const std::set<std::string>& relevant, std::size_t k) {
    if (relevant.empty()) return 0.0;
    const std::size_t n = std::min(k, run.hits.size());
    double dcg = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (relevant.count(run.hits[i].docid)) dcg += 1.0 / std::log2(static_cast<double>(i + 2));
    double ideal = 0.0;
    for (std::size_t i = 0; i < std::min(k, relevant.size()); ++i) ideal += 1.0 / std::log2(static_cast<double>(i + 2));
    return dcg / ideal;
}

inline double mrr_at_k(const RankedList& run, const Qrels& qrels, std::size_t k) {
    auto it = qrels.find(run.qid);
    return it == qrels.end() ? 0.0 : mrr_at_k(run, it->second, k);
}
inline double recall_at_k(const RankedList& run, const Qrels& qrels, std::size_t k) {
    auto it = qrels.find(run.qid);
    return it == qrels.end() ? 0.0 : recall_at_k(run, it->second, k);
}
inline double ndcg_at_k(const RankedList& run, const Qrels& qrels, std::size_t k) {
    auto it = qrels.find(run.qid);
    return it == qrels.end() ? 0.0 : ndcg_at_k(run, it->second, k);
}

/// Corpus-level means of the reported metric set.
struct MetricSet {
    double mrr10 = 0, ndcg10 = 0, mrr20 = 0, ndcg20 = 0, rec20 = 0, rec100 = 0;
    std::size_t evaluated = 0;
    std::vector<std::string> skipped;  ///< qids absent from the qrels

    static constexpr const char* kCsvHeader = "mrr@10,ndcg@10,mrr@20,ndcg@20,rec@20,rec@100";
    static constexpr const char* kNames[] = {"mrr@10", "ndcg@10", "mrr@20", "ndcg@20", "rec@20", "rec@100"};

    std::vector<double> as_vector() const { return {mrr10, ndcg10, mrr20, ndcg20, rec20, rec100}; }

    std::string csv_row() const {
        std::string row;
        char buf[32];
        for (double v : as_vector()) {
            std::snprintf(buf, sizeof buf, "%.6f", v);
            if (!row.empty()) row.push_back(',');
            row += buf;
        }
        return row;
    }
};

inline MetricSet evaluate_runs(const std::vector<RankedList>& runs, const Qrels& qrels) {
    MetricSet m;
    for (const auto& run : runs) {
        auto it = qrels.find(run.qid);
        if (it == qrels.end() || it->second.empty()) {
            m.skipped.push_back(run.qid);
            continue;
        }
        const auto& rel = it->second;
        m.mrr10 += mrr_at_k(run, rel, 10);
        m.ndcg10 += ndcg_at_k(run, rel, 10);
        m.mrr20 += mrr_at_k(run, rel, 20);
        m.ndcg20 += ndcg_at_k(run, rel, 20);
        m.rec20 += recall_at_k(run, rel, 20);
        m.rec100 += recall_at_k(run, rel, 100);
        ++m.evaluated;
    }
    if (m.evaluated > 0) {
        const double n = static_cast<double>(m.evaluated);
        for (double* v : {&m.mrr10, &m.ndcg10, &m.mrr20, &m.ndcg20, &m.rec20, &m.rec100}) *v /= n;
    }
    return m;
}

/// Encodes every query and searches the index.
inline std::vector<RankedList> search_queries(const EmbeddingIndex& index, const std::vector<QueryRecord>& queries,
                                              const Model& model, std::size_t k) {
    auto vecs = encode_queries(queries, model);
    std::vector<RankedList> runs;
    runs.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) runs.push_back(search_topk(index, vecs[i], k, queries[i].qid));
    return runs;
}

// ---------------------------------------------------------------------------
// TREC run files: "qid Q0 docid rank score tag"
// ---------------------------------------------------------------------------

inline std::string format_score(double score) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", score);
    return buf;
}

inline void write_run_file(const std::vector<RankedList>& runs, const std::string& path, const std::string& tag = "ciea") {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write run file " + path);
    for (const auto& run : runs)
        for (std::size_t i = 0; i < run.hits.size(); ++i)
            os << run.qid << " Q0 " << run.hits[i].docid << ' ' << (i + 1) << ' ' << format_score(run.hits[i].score)
               << ' ' << tag << '\n';
}

/// Queries appear in first-seen order; scores carry six decimals.
inline std::vector<RankedList> read_run_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read run file " + path);
    std::vector<RankedList> runs;
    std::map<std::string, std::size_t> slot;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string qid, q0, docid, rank_s, score_s, tag, extra;
        if (!(ls >> qid >> q0 >> docid >> rank_s >> score_s >> tag) || (ls >> extra) || q0 != "Q0") {
            throw ParseError("expected \"qid Q0 docid rank score tag\"", lineno);
        }
        std::size_t rank = 0;
        double score = 0.0;
        try {
            std::size_t used = 0;
            rank = std::stoul(rank_s, &used);
            if (used != rank_s.size()) throw std::invalid_argument("rank");
            score = std::stod(score_s, &used);
            if (used != score_s.size()) throw std::invalid_argument("score");
        } catch (const std::exception&) {
            throw ParseError("malformed rank or score", lineno);
        }
        auto [it, fresh] = slot.emplace(qid, runs.size());
        if (fresh) runs.push_back({qid, {}});
        auto& run = runs[it->second];
        if (rank != run.hits.size() + 1) throw ParseError("rank " + rank_s + " out of sequence", lineno);
        run.hits.push_back({docid, score});
    }
    return runs;
}

// ---------------------------------------------------------------------------
// Nearest vocabulary tokens
// ---------------------------------------------------------------------------

struct NearestTokens {
    std::vector<std::vector<TokenId>> per_row;
    std::vector<TokenId> unique;  ///< all rows merged, first-seen order
};

/// For each row of `rows` ([n x d]), the `top_n` most cosine-similar rows of
/// the embedding table. Reserved tokens are skipped when `skip_reserved`.
inline NearestTokens nearest_vocab_tokens(const Tensor& rows, const Tensor& embedding_table, std::size_t top_n,
                                          bool skip_reserved = true) {
    if (rows.rank() != 2 || embedding_table.rank() != 2 || rows.shape()[1] != embedding_table.shape()[1]) {
        throw DimensionError("nearest_vocab_tokens: " + shape_string(rows.shape()) + " vs table " +
                             shape_string(embedding_table.shape()));
    }
    const std::size_t n = rows.shape()[0], v = embedding_table.shape()[0], d = rows.shape()[1];
    auto rv = rows.values();
    auto tv = embedding_table.values();
    std::vector<double> tnorm(v);
    for (std::size_t t = 0; t < v; ++t) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += tv[t * d + j] * tv[t * d + j];
        tnorm[t] = std::max(std::sqrt(s), kNormEpsilon);
    }
    NearestTokens out;
    std::unordered_set<TokenId> seen;
    for (std::size_t i = 0; i < n; ++i) {
        double rn = 0.0;
        for (std::size_t j = 0; j < d; ++j) rn += rv[i * d + j] * rv[i * d + j];
        rn = std::max(std::sqrt(rn), kNormEpsilon);
        std::vector<std::pair<double, TokenId>> cands;
        for (std::size_t t = skip_reserved ? kReservedTokens : 0; t < v; ++t) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += rv[i * d + j] * tv[t * d + j];
            cands.emplace_back(s / (rn * tnorm[t]), static_cast<TokenId>(t));
        }
        const std::size_t take = std::min(top_n, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(take), cands.end(),
                          [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
        std::vector<TokenId> row;
        for (std::size_t k = 0; k < take; ++k) {
            row.push_back(cands[k].second);
            if (seen.insert(cands[k].second).second) out.unique.push_back(cands[k].second);
        }
        out.per_row.push_back(std::move(row));
    }
    return out;
}

}  // namespace ciea
