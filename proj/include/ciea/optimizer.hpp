#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ciea/checkpoint.hpp"
#include "ciea/errors.hpp"

namespace ciea {

/// Adam with decoupled weight decay.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;

    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::size_t steps = 0;

    /// One update of every tensor in `params` that requires grad. Tensors
    /// without a gradient buffer are treated as having a zero gradient.
    void step(const ParamList& params, double lr) {
        if (first_moment.empty()) {
            for (const auto& p : params) {
                first_moment.emplace_back(p.tensor.size(), 0.0);
                second_moment.emplace_back(p.tensor.size(), 0.0);
            }
        }
        if (first_moment.size() != params.size()) throw ContractError("optimizer state does not match parameter list");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].tensor.requires_grad()) continue;
            if (first_moment[i].size() != params[i].tensor.size()) {
                throw ContractError("optimizer moment shape differs for \"" + params[i].name + "\"");
            }
            for (double g : params[i].tensor.grad()) {
                if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter \"" + params[i].name + "\"");
            }
        }
        ++steps;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor t = params[i].tensor;
            if (!t.requires_grad()) continue;
            auto values = t.mutable_values();
            auto grad = t.grad();
            auto& m = first_moment[i];
            auto& v = second_moment[i];
            for (std::size_t k = 0; k < values.size(); ++k) {
                const double g = grad.empty() ? 0.0 : grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                values[k] *= 1.0 - lr * weight_decay;
                values[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + epsilon);
            }
        }
    }
};

}  // namespace ciea
