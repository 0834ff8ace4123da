#pragma once

/// \file visual.hpp
/// \brief Frozen patch featurizer and the trainable projector into the text
/// encoder's hidden space.
///
/// The featurizer is a fixed affine map followed by tanh, drawn from its own
/// seed so every process sees the same weights. It never participates in
/// differentiation.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>

#include <nlohmann/json.hpp>

#include "ciea/checkpoint.hpp"
#include "ciea/data.hpp"
#include "ciea/tensor.hpp"

namespace ciea {

struct VisualConfig {
    std::size_t raw_dim = 16;
    std::size_t clip_dim = 48;
    std::uint64_t frozen_seed = 20240229;
};

inline void to_json(nlohmann::json& j, const VisualConfig& c) {
    j = {{"raw_dim", c.raw_dim}, {"clip_dim", c.clip_dim}, {"frozen_seed", c.frozen_seed}};
}

inline void from_json(const nlohmann::json& j, VisualConfig& c) {
    j.at("raw_dim").get_to(c.raw_dim);
    j.at("clip_dim").get_to(c.clip_dim);
    j.at("frozen_seed").get_to(c.frozen_seed);
}

class FrozenVisualParams {
public:
    static FrozenVisualParams make(const VisualConfig& config) {
        if (config.raw_dim == 0 || config.clip_dim == 0) throw ContractError("visual dimensions must be positive");
        std::mt19937_64 rng(config.frozen_seed);
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(config.raw_dim)));
        std::vector<double> w(config.raw_dim * config.clip_dim), b(config.clip_dim);
        for (double& x : w) x = dist(rng);
        for (double& x : b) x = 0.1 * dist(rng);
        FrozenVisualParams p;
        p.weight_ = Tensor::matrix(config.raw_dim, config.clip_dim, std::move(w));
        p.bias_ = Tensor::vector(std::move(b));
        return p;
    }

    /// Explicit weights, mostly for tests.
    static FrozenVisualParams from(Tensor weight, Tensor bias) {
        if (weight.rank() != 2 || bias.size() != weight.shape()[1]) {
            throw DimensionError("frozen visual params: bias must match weight columns");
        }
        FrozenVisualParams p;
        p.weight_ = weight.clone(false);
        p.bias_ = bias.clone(false);
        return p;
    }

    const Tensor& weight() const noexcept { return weight_; }
    const Tensor& bias() const noexcept { return bias_; }
    std::size_t raw_dim() const { return weight_.shape()[0]; }
    std::size_t clip_dim() const { return weight_.shape()[1]; }

    /// FNV-1a over the raw bytes of every weight.
    std::uint64_t fingerprint() const {
        std::uint64_t h = 1469598103934665603ull;
        for (const Tensor* t : {&weight_, &bias_})
            for (double x : t->values()) {
                std::uint64_t bits;
                std::memcpy(&bits, &x, sizeof bits);
                for (int i = 0; i < 8; ++i) {
                    h ^= (bits >> (8 * i)) & 0xff;
                    h *= 1099511628211ull;
                }
            }
        return h;
    }

private:
    Tensor weight_, bias_;
};

struct Projector {
    Tensor weight;  // clip_dim x d
    Tensor bias;    // d

    static Projector init(std::size_t clip_dim, std::size_t d, std::mt19937_64& rng) {
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(clip_dim)));
        std::vector<double> w(clip_dim * d);
        for (double& x : w) x = dist(rng);
        return {Tensor::matrix(clip_dim, d, std::move(w), true), Tensor::zeros({d}, true)};
    }

    void collect(ParamList& out) const {
        out.push_back({"projector.weight", weight});
        out.push_back({"projector.bias", bias});
    }
};

inline Tensor patch_tensor(const PatchGrid& img) {
    if (img.rows == 0) throw ContractError("patch grid has no patches");
    return Tensor::matrix(img.rows, img.cols, img.values);
}

/// tanh(patches * W + b): [l_i x clip_dim], never differentiated.
inline Tensor featurize(const PatchGrid& img, const FrozenVisualParams& frozen) {
    if (img.cols != frozen.raw_dim()) {
        throw ContractError("featurize: patch width " + std::to_string(img.cols) + " does not match frozen raw_dim " +
                            std::to_string(frozen.raw_dim()));
    }
    Tape local = Tape::inference();
    Tensor x = matmul(local, patch_tensor(img), frozen.weight());
    return tanh(local, add(local, x, frozen.bias()));
}

/// Proj(.): feats * W + b per row.
inline Tensor project(Tape& tape, const Tensor& feats, const Projector& proj) {
    if (feats.rank() != 2 || feats.shape()[1] != proj.weight.shape()[0]) {
        throw ContractError("project: features " + shape_string(feats.shape()) + " do not match projector " +
                            shape_string(proj.weight.shape()));
    }
    return add(tape, matmul(tape, feats, proj.weight), proj.bias);
}

}  // namespace ciea
