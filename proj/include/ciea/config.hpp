#pragma once

/// \file config.hpp
/// \brief Flat run configuration shared by every CLI command.
///
/// Defaults are sized for a laptop; the struct defaults of TrainConfig and
/// LossConfig keep the published reference values.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ciea/alignment.hpp"
#include "ciea/document_encoder.hpp"
#include "ciea/losses.hpp"
#include "ciea/synthetic.hpp"
#include "ciea/trainer.hpp"

namespace ciea {

struct RunConfig {
    std::size_t seed = 7;
    std::string data_dir = "data";
    std::string output_dir = "runs/ciea";

    // synthetic data
    std::size_t n_docs = 2000;
    std::size_t group_size = 20;
    std::size_t object_words = 40;
    std::size_t detail_words = 100;
    std::size_t patches_per_doc = 4;
    std::size_t raw_patch_dim = 16;
    double complementary_fraction = 0.6;
    double text_only_fraction = 0.0;
    double patch_noise = 0.1;

    // vocabulary and encoder
    std::size_t min_count = 1;
    std::size_t max_len = kDefaultMaxTextLen;
    std::size_t hidden_dim = 32;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_dim = 64;
    std::size_t clip_dim = 48;
    std::size_t frozen_seed = 20240229;
    std::string weights_mode = "dissimilar";

    // losses
    double temperature = 0.1;
    double lambda = 0.1;
    std::size_t negatives = 1;
    std::size_t min_mask_len = 2;
    bool comp_on_fully_masked = false;

    // training
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    double learning_rate = 3e-3;
    double weight_decay = 0.01;
    std::size_t eval_every_steps = 100;
    std::size_t early_stop_patience = 5;
    std::size_t hard_neg_pool = 20;
    std::size_t hard_epochs = 0;
    std::size_t max_steps = 0;
    double dev_fraction = 0.1;
    std::size_t train_seed = 1;

    // projector warm-up
    std::size_t align_steps = 2000;
    std::size_t align_batch_size = 16;
    double align_learning_rate = 1e-2;
    double align_temperature = 0.1;

    // retrieval and ablation
    std::size_t top_k = 100;
    std::size_t ablation_seeds = 5;
    double test_fraction = 0.2;

    using Member = std::variant<std::size_t RunConfig::*, double RunConfig::*, bool RunConfig::*, std::string RunConfig::*>;

    struct Field {
        const char* key;
        Member member;
        const char* help;
    };

    static const std::vector<Field>& fields() {
        static const std::vector<Field> f = {
            {"seed", &RunConfig::seed, "seed for data generation and splits"},
            {"data_dir", &RunConfig::data_dir, "directory holding corpus.jsonl, queries.jsonl, qrels.tsv"},
            {"output_dir", &RunConfig::output_dir, "directory for this command's outputs"},
            {"n_docs", &RunConfig::n_docs, "synthetic corpus size"},
            {"group_size", &RunConfig::group_size, "documents sharing one caption topic pair"},
            {"object_words", &RunConfig::object_words, "words usable as topics and visual concepts"},
            {"detail_words", &RunConfig::detail_words, "caption-only words"},
            {"patches_per_doc", &RunConfig::patches_per_doc, "image patches per document"},
            {"raw_patch_dim", &RunConfig::raw_patch_dim, "raw patch feature width"},
            {"complementary_fraction", &RunConfig::complementary_fraction, "share of queries needing patch-only concepts"},
            {"text_only_fraction", &RunConfig::text_only_fraction, "share of documents without an image"},
            {"patch_noise", &RunConfig::patch_noise, "stddev of patch noise"},
            {"min_count", &RunConfig::min_count, "minimum word count for the vocabulary"},
            {"max_len", &RunConfig::max_len, "token limit and positional table size"},
            {"hidden_dim", &RunConfig::hidden_dim, "model width d"},
            {"layers", &RunConfig::layers, "transformer blocks"},
            {"heads", &RunConfig::heads, "attention heads"},
            {"ffn_dim", &RunConfig::ffn_dim, "feed-forward width"},
            {"clip_dim", &RunConfig::clip_dim, "frozen visual feature width"},
            {"frozen_seed", &RunConfig::frozen_seed, "seed of the frozen visual weights"},
            {"weights_mode", &RunConfig::weights_mode, "dissimilar, similar or uniform"},
            {"temperature", &RunConfig::temperature, "contrastive temperature"},
            {"lambda", &RunConfig::lambda, "weight of the image-query loss"},
            {"negatives", &RunConfig::negatives, "hard negatives per query in the second phase"},
            {"min_mask_len", &RunConfig::min_mask_len, "shortest query/caption overlap to mask"},
            {"comp_on_fully_masked", &RunConfig::comp_on_fully_masked, "keep the image-query loss for all-mask queries"},
            {"epochs", &RunConfig::epochs, "epochs of in-batch training"},
            {"batch_size", &RunConfig::batch_size, "queries per batch"},
            {"learning_rate", &RunConfig::learning_rate, "AdamW learning rate"},
            {"weight_decay", &RunConfig::weight_decay, "AdamW decoupled weight decay"},
            {"eval_every_steps", &RunConfig::eval_every_steps, "steps between dev evaluations"},
            {"early_stop_patience", &RunConfig::early_stop_patience, "evaluations without improvement before stopping"},
            {"hard_neg_pool", &RunConfig::hard_neg_pool, "mined negatives kept per query"},
            {"hard_epochs", &RunConfig::hard_epochs, "epochs of hard-negative training (0 skips)"},
            {"max_steps", &RunConfig::max_steps, "per-phase step cap (0 = none)"},
            {"dev_fraction", &RunConfig::dev_fraction, "share of training queries held out for early stopping"},
            {"train_seed", &RunConfig::train_seed, "seed for initialisation and batching"},
            {"align_steps", &RunConfig::align_steps, "projector warm-up steps (0 skips)"},
            {"align_batch_size", &RunConfig::align_batch_size, "captions per warm-up batch"},
            {"align_learning_rate", &RunConfig::align_learning_rate, "warm-up learning rate"},
            {"align_temperature", &RunConfig::align_temperature, "warm-up temperature"},
            {"top_k", &RunConfig::top_k, "documents retrieved per query"},
            {"ablation_seeds", &RunConfig::ablation_seeds, "training seeds per ablation variant"},
            {"test_fraction", &RunConfig::test_fraction, "share of queries held out for ablation scoring"},
        };
        return f;
    }

    static std::string kebab(const std::string& key) {
        std::string k = key;
        for (char& c : k)
            if (c == '_') c = '-';
        return k;
    }

    /// Sets one key from its textual form, as given on the command line.
    void set(const std::string& key, const std::string& text) {
        for (const auto& f : fields()) {
            if (key != f.key) continue;
            std::visit(
                [&](auto mp) {
                    using T = std::decay_t<decltype(this->*mp)>;
                    if constexpr (std::is_same_v<T, std::string>) {
                        this->*mp = text;
                    } else if constexpr (std::is_same_v<T, bool>) {
                        if (text == "true" || text == "1") this->*mp = true;
                        else if (text == "false" || text == "0") this->*mp = false;
                        else throw ContractError("--" + kebab(key) + " expects true or false, got \"" + text + "\"");
                    } else {
                        std::istringstream is(text);
                        T v{};
                        if (!(is >> v) || !is.eof() || (std::is_unsigned_v<T> && text.find('-') != std::string::npos)) {
                            throw ContractError("--" + kebab(key) + " cannot parse \"" + text + "\"");
                        }
                        this->*mp = v;
                    }
                },
                f.member);
            return;
        }
        throw ContractError("unknown configuration key \"" + key + "\"");
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& f : fields()) std::visit([&](auto mp) { j[f.key] = this->*mp; }, f.member);
        return j;
    }

    /// Overlays the keys present in `j`; any key not in fields() is an error.
    void merge(const nlohmann::json& j) {
        if (!j.is_object()) throw ContractError("configuration must be a JSON object");
        for (auto it = j.begin(); it != j.end(); ++it) {
            const Field* field = nullptr;
            for (const auto& f : fields())
                if (it.key() == f.key) field = &f;
            if (!field) throw ContractError("unknown configuration key \"" + it.key() + "\"");
            std::visit(
                [&](auto mp) {
                    using T = std::decay_t<decltype(this->*mp)>;
                    const auto& v = it.value();
                    const bool ok = std::is_same_v<T, std::string>   ? v.is_string()
                                    : std::is_same_v<T, bool>        ? v.is_boolean()
                                    : std::is_same_v<T, std::size_t> ? v.is_number_unsigned()
                                                                     : v.is_number();
                    if (!ok) throw ContractError("configuration key \"" + it.key() + "\" has the wrong type");
                    this->*mp = v.template get<T>();
                },
                field->member);
        }
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot read config " + path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(is);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ": " + e.what(), 0);
        }
        RunConfig c;
        c.merge(j);
        return c;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot write " + path);
        os << to_json().dump(2) << '\n';
    }

    SyntheticSpec synthetic() const {
        SyntheticSpec s;
        s.n_docs = n_docs;
        s.group_size = group_size;
        s.object_words = object_words;
        s.detail_words = detail_words;
        s.patches_per_doc = patches_per_doc;
        s.raw_patch_dim = raw_patch_dim;
        s.complementary_fraction = complementary_fraction;
        s.text_only_fraction = text_only_fraction;
        s.patch_noise = patch_noise;
        return s;
    }

    ModelConfig model(std::size_t vocab_size) const {
        ModelConfig m;
        m.encoder.hidden_dim = hidden_dim;
        m.encoder.layers = layers;
        m.encoder.heads = heads;
        m.encoder.ffn_dim = ffn_dim;
        m.encoder.max_len = max_len;
        m.encoder.vocab_size = vocab_size;
        m.encoder.validate();
        m.visual.raw_dim = raw_patch_dim;
        m.visual.clip_dim = clip_dim;
        m.visual.frozen_seed = frozen_seed;
        m.weights_mode = weights_mode_from_string(weights_mode);
        return m;
    }

    LossConfig loss() const {
        LossConfig l;
        l.temperature = temperature;
        l.lambda = lambda;
        l.negatives = negatives;
        l.min_mask_len = min_mask_len;
        l.comp_on_fully_masked = comp_on_fully_masked;
        l.validate();
        return l;
    }

    TrainConfig train() const {
        TrainConfig t;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.learning_rate = learning_rate;
        t.weight_decay = weight_decay;
        t.eval_every_steps = eval_every_steps;
        t.early_stop_patience = early_stop_patience;
        t.hard_neg_pool = hard_neg_pool;
        t.hard_epochs = hard_epochs;
        t.max_steps = max_steps;
        t.dev_fraction = dev_fraction;
        t.seed = train_seed;
        t.validate();
        return t;
    }

    AlignConfig align() const {
        AlignConfig a;
        a.steps = align_steps;
        a.batch_size = align_batch_size;
        a.learning_rate = align_learning_rate;
        a.temperature = align_temperature;
        a.seed = train_seed;
        a.validate();
        return a;
    }

    void validate() const {
        synthetic();
        model(kReservedTokens + 1);
        loss();
        train();
        align();
        if (top_k == 0) throw ContractError("top_k must be positive");
        if (test_fraction <= 0.0 || test_fraction >= 1.0) throw ContractError("test_fraction must lie in (0,1)");
    }
};

}  // namespace ciea
