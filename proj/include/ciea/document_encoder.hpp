#pragma once

/// \file document_encoder.hpp
/// \brief The full model and the document-side encoders.
///
/// A multimodal document is encoded as
///
///     Trans([e_start ; re-weighted patches ; e_end ; caption tokens])
///
/// with positions running over the whole fused sequence, pooled at position 0.
/// Text-only documents go through exactly the query path. The image-only
/// representation runs Trans over the re-weighted patches alone.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ciea/checkpoint.hpp"
#include "ciea/data.hpp"
#include "ciea/extractor.hpp"
#include "ciea/text_encoder.hpp"
#include "ciea/visual.hpp"
#include "ciea/vocab.hpp"

namespace ciea {

struct ModelConfig {
    EncoderConfig encoder;
    VisualConfig visual;
    WeightsMode weights_mode = WeightsMode::dissimilar;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"encoder", c.encoder}, {"visual", c.visual}, {"weights_mode", to_string(c.weights_mode)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("encoder").get_to(c.encoder);
    j.at("visual").get_to(c.visual);
    c.weights_mode = weights_mode_from_string(j.at("weights_mode").get<std::string>());
}

struct Model {
    ModelConfig config;
    EncoderParams encoder;
    FrozenVisualParams frozen;
    Projector projector;
    ExtractorParams extractor;

    static Model init(const ModelConfig& config, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        Model m;
        m.config = config;
        m.encoder = EncoderParams::init(config.encoder, rng);
        m.frozen = FrozenVisualParams::make(config.visual);
        m.projector = Projector::init(config.visual.clip_dim, config.encoder.hidden_dim, rng);
        m.extractor = ExtractorParams::init(config.encoder.hidden_dim, rng);
        return m;
    }

    /// Every trainable tensor, in a fixed order.
    ParamList trainable() const {
        ParamList out;
        encoder.collect(out);
        projector.collect(out);
        extractor.collect(out);
        return out;
    }

    std::vector<std::vector<double>> snapshot() const {
        std::vector<std::vector<double>> s;
        for (const auto& p : trainable()) s.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
        return s;
    }

    void restore(const std::vector<std::vector<double>>& s) {
        auto params = trainable();
        if (s.size() != params.size()) throw ContractError("snapshot does not match the model");
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto dst = params[i].tensor.mutable_values();
            if (dst.size() != s[i].size()) throw ContractError("snapshot does not match the model");
            std::copy(s[i].begin(), s[i].end(), dst.begin());
        }
    }

    void zero_grad() const {
        for (auto& p : trainable()) Tensor(p.tensor).zero_grad();
    }
};

/// Intermediate tensors of the image path, exposed for probes and tests.
struct ImageEncoding {
    Tensor projected;   ///< [l_i x d], Proj(CLIP(patches))
    DifferenceWeights weights;
    Tensor reweighted;  ///< [l_i x d]
};

/// featurize -> project -> patch_differences -> reweighted_attention.
inline ImageEncoding encode_image_patches(Tape& tape, const Document& doc, const Tensor& text_emb, const Model& model) {
    if (!doc.patches) throw ContractError("document \"" + doc.id + "\" has no patches");
    ImageEncoding out;
    out.projected = project(tape, featurize(*doc.patches, model.frozen), model.projector);
    out.weights = patch_differences(tape, out.projected, text_emb, model.config.weights_mode);
    out.reweighted = reweighted_attention(tape, out.projected, out.weights.w, model.extractor);
    return out;
}

inline ImageEncoding encode_image_patches(Tape& tape, const Document& doc, const Model& model) {
    return encode_image_patches(tape, doc, token_embeddings(tape, doc.text, model.encoder), model);
}

/// Fused input rows [e_start ; image ; e_end ; text] before positions are added.
/// Caption tokens beyond the positional table are dropped from the tail.
inline Tensor fused_sequence(Tape& tape, const Tensor& image, const Tensor& text_emb, const Model& model) {
    static constexpr TokenId kStart[] = {kStartId};
    static constexpr TokenId kEnd[] = {kEndId};
    const std::size_t li = image.shape()[0];
    const std::size_t room = model.config.encoder.max_len;
    if (li + 2 > room) throw ContractError("image has more patches than positional slots");
    Tensor text = text_emb;
    if (li + 2 + text.shape()[0] > room) text = slice_rows(tape, text, 0, room - li - 2);
    std::vector<Tensor> parts{gather_rows(tape, model.encoder.token_embedding, kStart), image,
                              gather_rows(tape, model.encoder.token_embedding, kEnd)};
    if (text.shape()[0] > 0) parts.push_back(text);
    return concat(tape, parts);
}

inline Representation encode_document(Tape& tape, const Document& doc, const Model& model) {
    if (!doc.patches) {
        if (doc.text.empty()) throw ContractError("document \"" + doc.id + "\" has neither text nor patches");
        return encode_text(tape, doc.text, model.encoder, RepSource::text_only);
    }
    Tensor text_emb = token_embeddings(tape, doc.text, model.encoder);
    ImageEncoding img = encode_image_patches(tape, doc, text_emb, model);
    Tensor seq = add_positions(tape, fused_sequence(tape, img.reweighted, text_emb, model), model.encoder);
    std::vector<bool> pad(seq.shape()[0], false);
    const std::size_t text_begin = img.reweighted.shape()[0] + 2;
    for (std::size_t i = text_begin; i < pad.size(); ++i) pad[i] = doc.text[i - text_begin] == kPadId;
    Tensor h = trans(tape, seq, pad, model.encoder);
    return {pool_first(tape, h), RepSource::multimodal};
}

inline Representation encode_image_only(Tape& tape, const Document& doc, const Model& model) {
    if (!doc.patches) throw ContractError("encode_image_only: document \"" + doc.id + "\" is text-only");
    ImageEncoding img = encode_image_patches(tape, doc, model);
    Tensor seq = add_positions(tape, img.reweighted, model.encoder);
    Tensor h = trans(tape, seq, std::vector<bool>(seq.shape()[0], false), model.encoder);
    return {pool_first(tape, h), RepSource::image_only};
}

/// Unit-norm document vectors, row i for ids[i].
struct EncodedCorpus {
    std::vector<std::string> ids;
    std::size_t dim = 0;
    std::vector<double> vectors;

    std::span<const double> row(std::size_t i) const { return {vectors.data() + i * dim, dim}; }
};

inline EncodedCorpus encode_corpus(const std::vector<Document>& docs, const Model& model) {
    EncodedCorpus out;
    out.dim = model.config.encoder.hidden_dim;
    out.ids.reserve(docs.size());
    out.vectors.reserve(docs.size() * out.dim);
    for (const auto& d : docs) {
        Tape tape = Tape::inference();
        auto rep = encode_document(tape, d, model);
        out.ids.push_back(d.id);
        out.vectors.insert(out.vectors.end(), rep.vector.values().begin(), rep.vector.values().end());
    }
    return out;
}

inline std::vector<std::vector<double>> encode_queries(const std::vector<QueryRecord>& queries, const Model& model) {
    std::vector<std::vector<double>> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
        Tape tape = Tape::inference();
        auto rep = encode_query(tape, q.text, model.encoder);
        out.emplace_back(rep.vector.values().begin(), rep.vector.values().end());
    }
    return out;
}

inline void save_encoded_corpus(const EncodedCorpus& enc, const std::string& prefix) {
    ParamList arrays{{"vectors", Tensor::matrix(enc.ids.size(), enc.dim, enc.vectors)}};
    save_arrays(prefix, arrays, {{"kind", "encoded-corpus"}, {"dim", enc.dim}, {"ids", enc.ids}});
}

inline EncodedCorpus load_encoded_corpus(const std::string& prefix) {
    auto file = load_arrays(prefix);
    if (file.meta.value("kind", "") != "encoded-corpus" || file.arrays.size() != 1) {
        throw ParseError(prefix + ".json is not an encoded corpus", 0);
    }
    EncodedCorpus enc;
    enc.dim = file.meta.at("dim").get<std::size_t>();
    enc.ids = file.meta.at("ids").get<std::vector<std::string>>();
    const auto& t = file.arrays[0].tensor;
    if (t.size() != enc.ids.size() * enc.dim) throw ParseError(prefix + ": vector count does not match ids", 0);
    enc.vectors.assign(t.values().begin(), t.values().end());
    return enc;
}

/// Checkpoint directory layout: checkpoint.json / checkpoint.bin / vocab.txt.
inline void save_checkpoint(const std::string& dir, const Model& model, const Vocabulary& vocab,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta = {{"kind", "ciea-checkpoint"},
                           {"model", model.config},
                           {"frozen_fingerprint", model.frozen.fingerprint()},
                           {"extra", extra}};
    save_arrays(dir + "/checkpoint", model.trainable(), meta);
    vocab.save(dir + "/vocab.txt");
}

struct LoadedCheckpoint {
    Model model;
    Vocabulary vocab;
    nlohmann::json extra;
};

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
    auto file = load_arrays(dir + "/checkpoint");
    if (file.meta.value("kind", "") != "ciea-checkpoint") throw ParseError(dir + " is not a checkpoint", 0);
    ModelConfig cfg = file.meta.at("model").get<ModelConfig>();
    LoadedCheckpoint out{Model::init(cfg, 0), Vocabulary::load(dir + "/vocab.txt"), file.meta.value("extra", nlohmann::json::object())};
    if (out.model.frozen.fingerprint() != file.meta.at("frozen_fingerprint").get<std::uint64_t>()) {
        throw ContractError("frozen visual weights differ from the ones the checkpoint was trained with");
    }
    assign_arrays(out.model.trainable(), file.arrays);
    return out;
}

}  // namespace ciea
