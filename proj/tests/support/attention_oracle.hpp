#pragma once

// Plain-loop reference for patch weights and single-head attention.

#include <algorithm>
#include <cmath>
#include <vector>

namespace ciea::oracle {

using Matrix = std::vector<std::vector<double>>;

inline double pair_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// r_j = -max_c cos(p_j, t_c), by exhaustive pairs.
inline std::vector<double> brute_force_r(const Matrix& patches, const Matrix& tokens) {
    std::vector<double> r;
    for (const auto& p : patches) {
        double best = -2.0;
        for (const auto& t : tokens) best = std::max(best, pair_cosine(p, t));
        r.push_back(-best);
    }
    return r;
}

inline Matrix times(const Matrix& a, const Matrix& b) {
    Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

/// softmax(((X Wq)(X Wk)^T * w_col) / sqrt(d)) (X Wv).
inline Matrix weighted_attention(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv,
                                 const std::vector<double>& w) {
    const Matrix q = times(x, wq), k = times(x, wk), v = times(x, wv);
    const std::size_t n = x.size(), d = x[0].size();
    Matrix out(n, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> logits(n);
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += q[i][c] * k[j][c];
            logits[j] = s * w[j] / std::sqrt(static_cast<double>(d));
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& l : logits) z += (l = std::exp(l - mx));
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < d; ++c) out[i][c] += logits[j] / z * v[j][c];
    }
    return out;
}

}  // namespace ciea::oracle
