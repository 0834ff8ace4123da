#pragma once

/// \file trainer.hpp
/// \brief Two-phase contrastive training: in-batch negatives from scratch,
/// then mined hard negatives starting from the best phase-one weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ciea/data.hpp"
#include "ciea/document_encoder.hpp"
#include "ciea/losses.hpp"
#include "ciea/optimizer.hpp"
#include "ciea/retrieval.hpp"

namespace ciea {

struct TrainConfig {
    std::size_t epochs = 40;
    std::size_t batch_size = 64;
    double learning_rate = 5e-6;
    std::size_t eval_every_steps = 500;
    std::size_t early_stop_patience = 5;
    std::size_t hard_neg_pool = 100;
    /// Epochs of the hard-negative phase; 0 skips it.
    std::size_t hard_epochs = 40;
    /// Per-phase step cap; 0 means unlimited.
    std::size_t max_steps = 0;
    double weight_decay = 0.01;
    double dev_fraction = 0.1;
    std::uint64_t seed = 13;

    void validate() const {
        if (epochs == 0 || batch_size < 2 || !(learning_rate > 0) || eval_every_steps == 0 || early_stop_patience == 0 ||
            hard_neg_pool == 0) {
            throw ContractError("train config: epochs, batch_size>=2, learning_rate, eval_every_steps, "
                                "early_stop_patience and hard_neg_pool must be positive");
        }
        if (dev_fraction < 0.0 || dev_fraction >= 1.0) throw ContractError("dev_fraction must lie in [0,1)");
    }
};

/// One query of a training batch: its index, the positive it trains
/// against, and every document annotated relevant to it.
struct BatchItem {
    std::size_t query = 0;
    std::size_t positive = 0;
    std::vector<std::size_t> relevant;
};

/// Other queries' positives act as negatives; anything relevant to the query
/// itself is excluded and duplicates collapse.
inline std::vector<std::vector<std::size_t>> sample_in_batch_negatives(const std::vector<BatchItem>& batch) {
    if (batch.size() < 2) throw ContractError("in-batch negatives need a batch of at least 2");
    std::vector<std::vector<std::size_t>> out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& own = batch[i].relevant;
        for (std::size_t j = 0; j < batch.size(); ++j) {
            if (j == i) continue;
            const std::size_t d = batch[j].positive;
            if (std::find(own.begin(), own.end(), d) != own.end()) continue;
            if (std::find(out[i].begin(), out[i].end(), d) != out[i].end()) continue;
            out[i].push_back(d);
        }
    }
    return out;
}

/// Per query, the documents most similar under a checkpoint, positives excluded.
struct HardNegatives {
    std::vector<std::string> qids;
    std::vector<std::vector<std::string>> docids;
    bool clamped = false;
};

inline HardNegatives mine_hard_negatives(const Model& model, const std::vector<Document>& corpus,
                                         const std::vector<QueryRecord>& queries, std::size_t pool_size) {
    if (pool_size == 0) throw ContractError("hard negative pool must be positive");
    auto index = EmbeddingIndex::build(encode_corpus(corpus, model));
    auto qvecs = encode_queries(queries, model);
    HardNegatives out;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const std::set<std::string> pos(queries[i].positives.begin(), queries[i].positives.end());
        std::size_t available = 0;
        for (const auto& id : index.ids()) available += pos.count(id) ? 0 : 1;
        if (pool_size > available) out.clamped = true;
        auto ranked = search_topk(index, qvecs[i], index.size(), queries[i].qid);
        std::vector<std::string> list;
        for (const auto& hit : ranked.hits) {
            if (list.size() >= pool_size) break;
            if (!pos.count(hit.docid)) list.push_back(hit.docid);
        }
        out.qids.push_back(queries[i].qid);
        out.docids.push_back(std::move(list));
    }
    return out;
}

inline void save_hard_negatives(const HardNegatives& h, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    for (std::size_t i = 0; i < h.qids.size(); ++i) os << nlohmann::json{{"qid", h.qids[i]}, {"negatives", h.docids[i]}}.dump() << '\n';
}

inline HardNegatives load_hard_negatives(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path);
    HardNegatives h;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = detail::parse_line(line, lineno);
        h.qids.push_back(detail::require_string(j, "qid", lineno));
        h.docids.push_back(j.at("negatives").get<std::vector<std::string>>());
    }
    return h;
}

/// Deterministic split: the first ceil(fraction * n) of a seeded permutation
/// become the dev set; both halves keep their input order.
struct QuerySplit {
    std::vector<QueryRecord> train, dev;
};

inline QuerySplit split_queries(const std::vector<QueryRecord>& queries, double fraction, std::uint64_t seed) {
    std::vector<std::size_t> perm(queries.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_dev = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(queries.size())));
    std::vector<bool> is_dev(queries.size(), false);
    for (std::size_t i = 0; i < n_dev && i < perm.size(); ++i) is_dev[perm[i]] = true;
    QuerySplit s;
    for (std::size_t i = 0; i < queries.size(); ++i) (is_dev[i] ? s.dev : s.train).push_back(queries[i]);
    return s;
}

/// Scalar losses of one batch, each averaged over the batch's queries.
struct BatchLoss {
    Tensor total;
    Tensor l_c;
    Tensor l_comp;  ///< undefined when no query in the batch contributes the term
};

/// Training view of the data: corpus, queries and per-query masked variants.
class TrainingData {
public:
    TrainingData(const std::vector<Document>& corpus, const std::vector<QueryRecord>& queries, std::size_t min_mask_len)
        : corpus_(&corpus), queries_(&queries) {
        auto by_id = index_by_id(corpus);
        for (const auto& q : queries) {
            if (q.text.empty()) throw ContractError("query \"" + q.qid + "\" has no in-vocabulary tokens");
            std::vector<std::size_t> rel;
            for (const auto& p : q.positives) {
                auto it = by_id.find(p);
                if (it == by_id.end()) throw ReferentialError("query \"" + q.qid + "\" names unknown positive \"" + p + "\"");
                rel.push_back(it->second);
            }
            relevant_.push_back(rel);
            const auto& pos = corpus[rel.front()];
            masked_.push_back(mask_query(q.text, find_overlap_segments(q.text, pos.text, min_mask_len)));
        }
        doc_index_ = std::move(by_id);
    }

    const std::vector<Document>& corpus() const { return *corpus_; }
    const std::vector<QueryRecord>& queries() const { return *queries_; }
    const std::vector<std::size_t>& relevant(std::size_t q) const { return relevant_[q]; }
    const MaskedQuery& masked(std::size_t q) const { return masked_[q]; }
    std::size_t doc_index(const std::string& id) const { return doc_index_.at(id); }

    BatchItem item(std::size_t q) const { return {q, relevant_[q].front(), relevant_[q]}; }

private:
    const std::vector<Document>* corpus_;
    const std::vector<QueryRecord>* queries_;
    std::vector<std::vector<std::size_t>> relevant_;
    std::vector<MaskedQuery> masked_;
    std::unordered_map<std::string, std::size_t> doc_index_;
};

/// Builds the batch objective on `tape`. The image-query term is skipped for a
/// query whose positive has no image, none of whose negatives has one, or
/// whose masked form is all [MASK] (unless the loss config asks for it).
inline BatchLoss batch_loss(Tape& tape, const Model& model, const TrainingData& data, const std::vector<BatchItem>& batch,
                            const std::vector<std::vector<std::size_t>>& negatives, const LossConfig& loss) {
    std::map<std::size_t, Tensor> doc_rep, img_rep;
    auto doc = [&](std::size_t d) -> const Tensor& {
        auto it = doc_rep.find(d);
        if (it == doc_rep.end()) it = doc_rep.emplace(d, encode_document(tape, data.corpus()[d], model).vector).first;
        return it->second;
    };
    auto img = [&](std::size_t d) -> const Tensor& {
        auto it = img_rep.find(d);
        if (it == img_rep.end()) it = img_rep.emplace(d, encode_image_only(tape, data.corpus()[d], model).vector).first;
        return it->second;
    };
    const bool use_comp = loss.lambda > 0.0;
    std::vector<Tensor> lc_terms, comp_terms, totals;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& it = batch[i];
        Tensor q = encode_query(tape, data.queries()[it.query].text, model.encoder).vector;
        std::vector<Tensor> negs;
        for (std::size_t d : negatives[i]) negs.push_back(doc(d));
        Tensor lc = loss_contrastive(tape, q, doc(it.positive), negs, loss.temperature);
        lc_terms.push_back(lc);
        Tensor term = lc;
        const auto& mq = data.masked(it.query);
        if (use_comp && data.corpus()[it.positive].multimodal() && (loss.comp_on_fully_masked || !mq.fully_masked())) {
            std::vector<Tensor> neg_imgs;
            for (std::size_t d : negatives[i])
                if (data.corpus()[d].multimodal()) neg_imgs.push_back(img(d));
            if (!neg_imgs.empty()) {
                Tensor qc = encode_text(tape, mq.tokens, model.encoder, RepSource::masked_query).vector;
                Tensor lcomp = loss_comp(tape, qc, img(it.positive), neg_imgs, loss.temperature);
                comp_terms.push_back(lcomp);
                term = loss_total(tape, lc, lcomp, loss.lambda);
            }
        }
        totals.push_back(term);
    }
    BatchLoss out;
    out.total = mean_of(tape, totals);
    out.l_c = mean_of(tape, lc_terms);
    if (!comp_terms.empty()) {
        out.l_comp = scale(tape, sum(tape, concat(tape, comp_terms)), 1.0 / static_cast<double>(batch.size()));
    }
    return out;
}

struct TrainResult {
    double best_dev_mrr10 = -1.0;
    std::size_t steps = 0;
    std::size_t evaluations = 0;
    bool early_stopped = false;
    bool diverged = false;
    std::string divergence;
    std::vector<nlohmann::json> log;
    HardNegatives hard_negatives;
};

using LogSink = std::function<void(const nlohmann::json&)>;

namespace detail {

inline MetricSet dev_metrics(const Model& model, const std::vector<Document>& corpus,
                             const std::vector<QueryRecord>& dev) {
    auto index = EmbeddingIndex::build(encode_corpus(corpus, model));
    return evaluate_runs(search_queries(index, dev, model, 100), qrels_from_queries(dev));
}

inline nlohmann::json metrics_json(const MetricSet& m) {
    nlohmann::json j;
    auto v = m.as_vector();
    for (std::size_t i = 0; i < v.size(); ++i) j[MetricSet::kNames[i]] = v[i];
    return j;
}

}  // namespace detail

/// Runs the training protocol in place on `model`; on return the model holds
/// the best weights seen on the dev queries.
inline TrainResult train(Model& model, const TrainConfig& config, const LossConfig& loss,
                         const std::vector<Document>& corpus, const std::vector<QueryRecord>& train_queries,
                         const std::vector<QueryRecord>& dev_queries, const LogSink& sink = {}) {
    config.validate();
    loss.validate();
    if (train_queries.size() < 2) throw ContractError("training needs at least two queries");
    TrainingData data(corpus, train_queries, loss.min_mask_len);
    TrainResult result;
    std::mt19937_64 rng(config.seed);
    auto emit = [&](nlohmann::json j) {
        if (sink) sink(j);
        result.log.push_back(std::move(j));
    };

    auto best = model.snapshot();
    const auto params = model.trainable();

    auto run_phase = [&](int phase, std::size_t epochs, const std::vector<std::vector<std::size_t>>* hard) -> bool {
        AdamW opt;
        opt.weight_decay = config.weight_decay;
        double phase_best = -1.0;
        std::size_t since_best = 0, phase_steps = 0;
        std::size_t last_eval_step = result.steps;

        auto evaluate = [&]() -> bool {
            auto m = detail::dev_metrics(model, corpus, dev_queries);
            ++result.evaluations;
            last_eval_step = result.steps;
            auto j = detail::metrics_json(m);
            j["eval_step"] = result.steps;
            j["phase"] = phase;
            emit(j);
            if (m.mrr10 > phase_best) {
                phase_best = m.mrr10;
                since_best = 0;
                if (m.mrr10 > result.best_dev_mrr10) {
                    result.best_dev_mrr10 = m.mrr10;
                    best = model.snapshot();
                }
            } else if (++since_best >= config.early_stop_patience) {
                result.early_stopped = true;
                return false;
            }
            return true;
        };

        std::vector<std::size_t> order(train_queries.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
                if (config.max_steps && phase_steps >= config.max_steps) break;
                std::vector<BatchItem> batch;
                for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k)
                    batch.push_back(data.item(order[k]));
                auto negatives = sample_in_batch_negatives(batch);
                if (hard) {
                    for (std::size_t i = 0; i < batch.size(); ++i) {
                        auto pool = (*hard)[batch[i].query];
                        std::shuffle(pool.begin(), pool.end(), rng);
                        std::size_t added = 0;
                        for (std::size_t d : pool) {
                            if (added >= loss.negatives) break;
                            if (std::find(negatives[i].begin(), negatives[i].end(), d) != negatives[i].end()) continue;
                            negatives[i].push_back(d);
                            ++added;
                        }
                    }
                }

                Tape tape;
                BatchLoss bl;
                try {
                    bl = batch_loss(tape, model, data, batch, negatives, loss);
                } catch (const NumericError& e) {
                    result.diverged = true;
                    result.divergence = e.what();
                    return false;
                }
                const double total = bl.total.item();
                if (!std::isfinite(total)) {
                    result.diverged = true;
                    result.divergence = "non-finite loss at step " + std::to_string(result.steps + 1);
                    return false;
                }
                model.zero_grad();
                backward(bl.total, tape);
                try {
                    opt.step(params, config.learning_rate);
                } catch (const NumericError& e) {
                    result.diverged = true;
                    result.divergence = e.what();
                    return false;
                }
                ++result.steps;
                ++phase_steps;
                emit({{"step", result.steps},
                      {"phase", phase},
                      {"loss", total},
                      {"l_c", bl.l_c.item()},
                      {"l_comp", bl.l_comp.defined() ? bl.l_comp.item() : 0.0}});
                if (result.steps % config.eval_every_steps == 0 && !evaluate()) return true;
            }
            if (config.max_steps && phase_steps >= config.max_steps) break;
        }
        if (last_eval_step != result.steps || result.evaluations == 0) evaluate();
        return true;
    };

    const bool ok = run_phase(1, config.epochs, nullptr);
    model.restore(best);
    if (!ok || config.hard_epochs == 0) return result;

    result.hard_negatives = mine_hard_negatives(model, corpus, train_queries, config.hard_neg_pool);
    std::vector<std::vector<std::size_t>> hard;
    for (const auto& list : result.hard_negatives.docids) {
        std::vector<std::size_t> idx;
        for (const auto& id : list) idx.push_back(data.doc_index(id));
        hard.push_back(std::move(idx));
    }
    result.early_stopped = false;
    run_phase(2, config.hard_epochs, &hard);
    model.restore(best);
    return result;
}

}  // namespace ciea
