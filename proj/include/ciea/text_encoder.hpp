#pragma once

/// \file text_encoder.hpp
/// \brief Token/position embeddings, pre-norm transformer blocks and
/// first-position pooling to a unit-norm representation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ciea/checkpoint.hpp"
#include "ciea/errors.hpp"
#include "ciea/tensor.hpp"
#include "ciea/vocab.hpp"

namespace ciea {

struct EncoderConfig {
    std::size_t hidden_dim = 32;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_dim = 64;
    std::size_t max_len = kDefaultMaxTextLen;
    std::size_t vocab_size = kReservedTokens;

    void validate() const {
        if (hidden_dim == 0 || heads == 0 || ffn_dim == 0 || max_len == 0) {
            throw ContractError("encoder dimensions must be positive");
        }
        if (hidden_dim % heads != 0) {
            throw ContractError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by heads " +
                                std::to_string(heads));
        }
        if (vocab_size < kReservedTokens) throw ContractError("vocabulary smaller than the reserved block");
    }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = {{"hidden_dim", c.hidden_dim}, {"layers", c.layers},     {"heads", c.heads},
         {"ffn_dim", c.ffn_dim},       {"max_len", c.max_len},   {"vocab_size", c.vocab_size}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
    j.at("hidden_dim").get_to(c.hidden_dim);
    j.at("layers").get_to(c.layers);
    j.at("heads").get_to(c.heads);
    j.at("ffn_dim").get_to(c.ffn_dim);
    j.at("max_len").get_to(c.max_len);
    j.at("vocab_size").get_to(c.vocab_size);
}

struct BlockParams {
    Tensor ln1_gain, ln1_bias;
    Tensor w_query, w_key, w_value, w_out;
    Tensor ln2_gain, ln2_bias;
    Tensor ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
};

struct EncoderParams {
    EncoderConfig config;
    Tensor token_embedding;     // V x d
    Tensor position_embedding;  // max_len x d
    std::vector<BlockParams> blocks;

    static EncoderParams init(const EncoderConfig& config, std::mt19937_64& rng) {
        config.validate();
        const std::size_t d = config.hidden_dim, f = config.ffn_dim;
        EncoderParams p;
        p.config = config;
        p.token_embedding = random_param(rng, {config.vocab_size, d}, 1.0);
        p.position_embedding = random_param(rng, {config.max_len, d}, 0.1);
        const double wd = 1.0 / std::sqrt(static_cast<double>(d));
        const double wf = 1.0 / std::sqrt(static_cast<double>(f));
        for (std::size_t l = 0; l < config.layers; ++l) {
            BlockParams b;
            b.ln1_gain = Tensor::filled({d}, 1.0, true);
            b.ln1_bias = Tensor::zeros({d}, true);
            b.w_query = random_param(rng, {d, d}, wd);
            b.w_key = random_param(rng, {d, d}, wd);
            b.w_value = random_param(rng, {d, d}, wd);
            b.w_out = random_param(rng, {d, d}, wd);
            b.ln2_gain = Tensor::filled({d}, 1.0, true);
            b.ln2_bias = Tensor::zeros({d}, true);
            b.ffn_in = random_param(rng, {d, f}, wd);
            b.ffn_in_bias = Tensor::zeros({f}, true);
            b.ffn_out = random_param(rng, {f, d}, wf);
            b.ffn_out_bias = Tensor::zeros({d}, true);
            p.blocks.push_back(std::move(b));
        }
        return p;
    }

    void collect(ParamList& out, const std::string& prefix = "encoder.") const {
        out.push_back({prefix + "token_embedding", token_embedding});
        out.push_back({prefix + "position_embedding", position_embedding});
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            const auto& b = blocks[l];
            const std::string p = prefix + "block" + std::to_string(l) + ".";
            out.push_back({p + "ln1_gain", b.ln1_gain});
            out.push_back({p + "ln1_bias", b.ln1_bias});
            out.push_back({p + "w_query", b.w_query});
            out.push_back({p + "w_key", b.w_key});
            out.push_back({p + "w_value", b.w_value});
            out.push_back({p + "w_out", b.w_out});
            out.push_back({p + "ln2_gain", b.ln2_gain});
            out.push_back({p + "ln2_bias", b.ln2_bias});
            out.push_back({p + "ffn_in", b.ffn_in});
            out.push_back({p + "ffn_in_bias", b.ffn_in_bias});
            out.push_back({p + "ffn_out", b.ffn_out});
            out.push_back({p + "ffn_out_bias", b.ffn_out_bias});
        }
    }
};

/// Token embedding rows only, no positions: [l x d].
inline Tensor token_embeddings(Tape& tape, std::span<const TokenId> tokens, const EncoderParams& params) {
    return gather_rows(tape, params.token_embedding, tokens);
}

/// Adds positional rows 0..l-1 to a [l x d] sequence.
inline Tensor add_positions(Tape& tape, const Tensor& x, const EncoderParams& params) {
    const std::size_t l = x.shape()[0];
    if (l > params.config.max_len) {
        throw ContractError("sequence of length " + std::to_string(l) + " exceeds max_len " +
                            std::to_string(params.config.max_len));
    }
    return add(tape, x, slice_rows(tape, params.position_embedding, 0, l));
}

/// Emb(.): token embedding plus positional embedding per row.
inline Tensor embed(Tape& tape, std::span<const TokenId> tokens, const EncoderParams& params) {
    return add_positions(tape, token_embeddings(tape, tokens, params), params);
}

/// Trans(.): pre-norm multi-head self-attention + feed-forward blocks.
/// `pad` marks positions excluded as attention keys and zeroed on output.
inline Tensor trans(Tape& tape, const Tensor& x, const std::vector<bool>& pad, const EncoderParams& params) {
    detail::require_matrix(x, "trans");
    const std::size_t l = x.shape()[0], d = params.config.hidden_dim;
    if (x.shape()[1] != d) throw DimensionError("trans: input width " + std::to_string(x.shape()[1]) + " != " + std::to_string(d));
    if (pad.size() != l) throw DimensionError("trans: pad mask length differs from sequence length");
    const bool any_pad = std::find(pad.begin(), pad.end(), true) != pad.end();
    if (l > 0 && std::all_of(pad.begin(), pad.end(), [](bool p) { return p; })) {
        return Tensor::zeros({l, d});
    }
    if (l == 0 || params.blocks.empty()) {
        if (!any_pad) return x;
    }

    Tensor key_mask, keep;
    if (any_pad) {
        std::vector<double> km(l), kp(l);
        for (std::size_t j = 0; j < l; ++j) {
            km[j] = pad[j] ? -std::numeric_limits<double>::infinity() : 0.0;
            kp[j] = pad[j] ? 0.0 : 1.0;
        }
        key_mask = Tensor::matrix(1, l, std::move(km));
        keep = Tensor::matrix(l, 1, std::move(kp));
    }

    const std::size_t heads = params.config.heads, dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor h = x;
    for (const auto& b : params.blocks) {
        Tensor n1 = layer_norm_rows(tape, h, b.ln1_gain, b.ln1_bias);
        Tensor q = matmul(tape, n1, b.w_query);
        Tensor k = matmul(tape, n1, b.w_key);
        Tensor v = matmul(tape, n1, b.w_value);
        std::vector<Tensor> outs;
        outs.reserve(heads);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            Tensor qh = heads == 1 ? q : slice_cols(tape, q, hd * dh, dh);
            Tensor kh = heads == 1 ? k : slice_cols(tape, k, hd * dh, dh);
            Tensor vh = heads == 1 ? v : slice_cols(tape, v, hd * dh, dh);
            Tensor logits = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
            if (any_pad) logits = add(tape, logits, key_mask);
            outs.push_back(matmul(tape, softmax_rows(tape, logits), vh));
        }
        Tensor attn = heads == 1 ? outs[0] : concat_cols(tape, outs);
        h = add(tape, h, matmul(tape, attn, b.w_out));
        Tensor n2 = layer_norm_rows(tape, h, b.ln2_gain, b.ln2_bias);
        Tensor f = gelu(tape, add(tape, matmul(tape, n2, b.ffn_in), b.ffn_in_bias));
        h = add(tape, h, add(tape, matmul(tape, f, b.ffn_out), b.ffn_out_bias));
    }
    if (any_pad) h = mul(tape, h, keep);
    return h;
}

enum class RepSource { multimodal, text_only, image_only, query, masked_query };

/// Pooled unit-norm embedding.
struct Representation {
    Tensor vector;
    RepSource source = RepSource::query;
};

inline std::vector<bool> pad_positions(std::span<const TokenId> tokens) {
    std::vector<bool> pad(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) pad[i] = tokens[i] == kPadId;
    return pad;
}

/// First row of a [l x d] sequence, L2-normalized, as a length-d vector.
inline Tensor pool_first(Tape& tape, const Tensor& h) {
    if (h.shape()[0] == 0) throw ContractError("cannot pool an empty sequence");
    Tensor first = reshape(tape, slice_rows(tape, h, 0, 1), {h.shape()[1]});
    return normalize_rows(tape, first);
}

/// Encodes a token sequence as Trans(Emb([<start> ; tokens])) pooled at
/// position 0. Tokens past the positional table are dropped.
inline Representation encode_text(Tape& tape, std::span<const TokenId> tokens, const EncoderParams& params,
                                   RepSource source) {
    if (tokens.empty()) throw ContractError("cannot encode an empty token sequence");
    TokenSequence seq{kStartId};
    const std::size_t room = params.config.max_len - 1;
    seq.insert(seq.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(std::min(room, tokens.size())));
    Tensor h = trans(tape, embed(tape, seq, params), pad_positions(seq), params);
    return {pool_first(tape, h), source};
}

inline Representation encode_query(Tape& tape, std::span<const TokenId> query, const EncoderParams& params) {
    return encode_text(tape, query, params, RepSource::query);
}

}  // namespace ciea
