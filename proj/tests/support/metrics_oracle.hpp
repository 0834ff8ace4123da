#pragma once

// Reference ranking metrics. The ideal DCG comes from enumerating every
// ordering of the document universe.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

namespace ciea::oracle {

inline double dcg(const std::vector<std::string>& ranking, const std::set<std::string>& relevant, std::size_t k) {
    double s = 0.0;
    for (std::size_t i = 0; i < ranking.size() && i < k; ++i)
        if (relevant.count(ranking[i])) s += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return s;
}

inline double brute_mrr(const std::vector<std::string>& ranking, const std::set<std::string>& relevant, std::size_t k) {
    for (std::size_t i = 0; i < ranking.size() && i < k; ++i)
        if (relevant.count(ranking[i])) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
}

inline double brute_recall(const std::vector<std::string>& ranking, const std::set<std::string>& relevant, std::size_t k) {
    std::size_t hit = 0;
    for (const auto& r : relevant) {
        auto it = std::find(ranking.begin(), ranking.end(), r);
        if (it != ranking.end() && static_cast<std::size_t>(it - ranking.begin()) < k) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(relevant.size());
}

inline double brute_ndcg(const std::vector<std::string>& ranking, const std::set<std::string>& relevant,
                         std::vector<std::string> universe, std::size_t k) {
    std::sort(universe.begin(), universe.end());
    double ideal = 0.0;
    do {
        ideal = std::max(ideal, dcg(universe, relevant, k));
    } while (std::next_permutation(universe.begin(), universe.end()));
    return dcg(ranking, relevant, k) / ideal;
}

}  // namespace ciea::oracle
