#pragma once

/// \file ablation.hpp
/// \brief Component ablation: variants, per-seed results, summary statistics
/// and the CSV/Markdown report.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ciea/pipeline.hpp"

namespace ciea {

struct AblationVariant {
    std::string name;
    std::string slug;
    bool image_query = true;
    WeightsMode mode = WeightsMode::dissimilar;
};

inline constexpr const char* kFullModel = "CIEA";
inline constexpr const char* kNoImageQuery = "w/o image query";
inline constexpr const char* kNoAttention = "w/o attention";
inline constexpr const char* kBase = "Base";
inline constexpr const char* kSimilarWeights = "Similar weights";

/// The four component rows, then the similar-weighting variant.
inline std::vector<AblationVariant> ablation_variants() {
    return {{kFullModel, "ciea", true, WeightsMode::dissimilar},
            {kNoImageQuery, "no-image-query", false, WeightsMode::dissimilar},
            {kNoAttention, "no-attention", true, WeightsMode::uniform},
            {kBase, "base", false, WeightsMode::uniform},
            {kSimilarWeights, "similar", true, WeightsMode::similar}};
}

inline RunConfig variant_config(const RunConfig& base, const AblationVariant& v, std::size_t train_seed) {
    RunConfig c = base;
    if (!v.image_query) c.lambda = 0.0;
    c.weights_mode = to_string(v.mode);
    c.train_seed = train_seed;
    return c;
}

struct SeedResult {
    std::string variant;
    std::size_t seed = 0;
    std::vector<double> metrics;  ///< in MetricSet::kNames order
};

using ProgressSink = std::function<void(const std::string&)>;
using RunLogFactory = std::function<LogSink(const AblationVariant&, std::size_t seed)>;

/// Trains every variant for seeds 1..R on the training share of `queries` and
/// scores it on the held-out share.
inline std::vector<SeedResult> run_ablation(const RunConfig& cfg, const std::vector<Document>& corpus,
                                            const std::vector<QueryRecord>& queries, std::size_t vocab_size,
                                            const ProgressSink& progress = {}, const RunLogFactory& logs = {}) {
    if (cfg.ablation_seeds == 0) throw ContractError("ablation_seeds must be positive");
    auto split = split_queries(queries, cfg.test_fraction, cfg.seed);
    if (split.dev.empty()) throw ContractError("test split is empty");
    std::vector<SeedResult> out;
    for (const auto& v : ablation_variants()) {
        for (std::size_t s = 1; s <= cfg.ablation_seeds; ++s) {
            const RunConfig c = variant_config(cfg, v, s);
            auto trained = train_from_config(c, vocab_size, corpus, split.train, logs ? logs(v, s) : LogSink{});
            auto m = score_queries(trained.model, corpus, split.dev, cfg.top_k);
            out.push_back({v.name, s, m.as_vector()});
            if (progress) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "%-16s seed %zu  steps %zu  test mrr@10 %.4f", v.name.c_str(), s,
                              trained.train.steps, m.mrr10);
                progress(buf);
            }
        }
    }
    return out;
}

inline std::string format_fixed(double v, int digits = 6) {
    if (std::isnan(v)) return "nan";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline void write_seed_csv(const std::vector<SeedResult>& rows, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << "variant,seed," << MetricSet::kCsvHeader << '\n';
    for (const auto& r : rows) {
        os << r.variant << ',' << r.seed;
        for (double v : r.metrics) os << ',' << format_fixed(v);
        os << '\n';
    }
}

inline std::vector<SeedResult> read_seed_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path + " (produced by `ciea ablate`)");
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(is, line) || line != std::string("variant,seed,") + MetricSet::kCsvHeader) {
        throw ParseError(path + ": unexpected header", 1);
    }
    std::vector<SeedResult> rows;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 8) throw ParseError(path + ": expected 8 columns", lineno);
        SeedResult r;
        r.variant = cells[0];
        try {
            std::size_t used = 0;
            r.seed = std::stoul(cells[1], &used);
            if (used != cells[1].size()) throw std::invalid_argument("seed");
            for (std::size_t i = 2; i < 8; ++i) {
                r.metrics.push_back(std::stod(cells[i], &used));
                if (used != cells[i].size()) throw std::invalid_argument("metric");
            }
        } catch (const std::exception&) {
            throw ParseError(path + ": malformed number", lineno);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

struct VariantSummary {
    std::string name;
    std::size_t n = 0;
    std::vector<double> mean;
    std::vector<double> stddev;  ///< sample stddev; NaN when n < 2
};

inline double sample_stddev(const std::vector<double>& xs) {
    if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// One summary per variant, in order of first appearance.
inline std::vector<VariantSummary> summarize(const std::vector<SeedResult>& rows) {
    std::vector<VariantSummary> out;
    for (const auto& r : rows) {
        bool seen = false;
        for (const auto& s : out) seen = seen || s.name == r.variant;
        if (seen) continue;
        VariantSummary s;
        s.name = r.variant;
        const std::size_t k = r.metrics.size();
        for (std::size_t m = 0; m < k; ++m) {
            std::vector<double> xs;
            for (const auto& q : rows)
                if (q.variant == r.variant) xs.push_back(q.metrics.at(m));
            double mean = 0.0;
            for (double x : xs) mean += x;
            s.n = xs.size();
            s.mean.push_back(mean / static_cast<double>(xs.size()));
            s.stddev.push_back(sample_stddev(xs));
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline const VariantSummary& find_summary(const std::vector<VariantSummary>& all, const std::string& name) {
    for (const auto& s : all)
        if (s.name == name) return s;
    throw ReferentialError("ablation results have no variant \"" + name + "\"");
}

/// `higher` beats `lower` on mean mrr@10; with `strict`, by more than the
/// pooled standard error sqrt(s_a^2/n_a + s_b^2/n_b).
struct OrderingCheck {
    std::string higher;
    std::string lower;
    bool strict = true;
    double gap = 0.0;
    double pooled_se = 0.0;
    bool holds = false;
};

inline OrderingCheck check_ordering(const std::vector<VariantSummary>& all, const std::string& higher,
                                    const std::string& lower, bool strict) {
    const auto& a = find_summary(all, higher);
    const auto& b = find_summary(all, lower);
    OrderingCheck c{higher, lower, strict};
    c.gap = a.mean[0] - b.mean[0];
    c.pooled_se = std::sqrt(a.stddev[0] * a.stddev[0] / static_cast<double>(a.n) +
                            b.stddev[0] * b.stddev[0] / static_cast<double>(b.n));
    c.holds = strict ? (!std::isnan(c.pooled_se) && c.gap > c.pooled_se) : c.gap >= 0.0;
    return c;
}

/// CIEA > {w/o image query, w/o attention} > Base, each by a pooled SE, and
/// dissimilar >= similar weighting.
inline std::vector<OrderingCheck> standard_orderings(const std::vector<VariantSummary>& all) {
    return {check_ordering(all, kFullModel, kNoImageQuery, true), check_ordering(all, kFullModel, kNoAttention, true),
            check_ordering(all, kNoImageQuery, kBase, true), check_ordering(all, kNoAttention, kBase, true),
            check_ordering(all, kFullModel, kSimilarWeights, false)};
}

inline void write_summary_csv(const std::vector<VariantSummary>& all, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << "variant,n";
    for (const char* name : MetricSet::kNames) os << ',' << name << "_mean," << name << "_std";
    os << '\n';
    for (const auto& s : all) {
        os << s.name << ',' << s.n;
        for (std::size_t m = 0; m < s.mean.size(); ++m) os << ',' << format_fixed(s.mean[m]) << ',' << format_fixed(s.stddev[m]);
        os << '\n';
    }
}

namespace detail {

inline std::string mean_std_cell(const VariantSummary& s, std::size_t m) {
    std::string cell = format_fixed(s.mean[m], 4);
    if (!std::isnan(s.stddev[m])) cell += " ± " + format_fixed(s.stddev[m], 4);
    return cell;
}

inline void markdown_table(std::ostream& os, const std::vector<VariantSummary>& all, const std::vector<std::string>& rows,
                           const std::vector<std::string>& labels) {
    os << "| Setting |";
    for (const char* name : MetricSet::kNames) os << ' ' << name << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < std::size(MetricSet::kNames); ++i) os << "---|";
    os << '\n';
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& s = find_summary(all, rows[r]);
        os << "| " << labels[r] << " |";
        for (std::size_t m = 0; m < s.mean.size(); ++m) os << ' ' << mean_std_cell(s, m) << " |";
        os << '\n';
    }
}

}  // namespace detail

inline void write_markdown_report(const std::vector<VariantSummary>& all, const std::vector<OrderingCheck>& checks,
                                  const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    const std::size_t n = all.empty() ? 0 : all.front().n;
    os << "# Ablation\n\nMean ± sample stddev over " << n << " training seeds, scored on held-out queries.\n\n";
    os << "## Components\n\n";
    detail::markdown_table(os, all, {kFullModel, kNoImageQuery, kNoAttention, kBase},
                           {kFullModel, kNoImageQuery, kNoAttention, kBase});
    os << "\n## Patch weighting\n\n";
    detail::markdown_table(os, all, {kFullModel, kSimilarWeights}, {"Dissimilar", "Similar"});
    os << "\n## Orderings on mrr@10\n\n";
    for (const auto& c : checks) {
        os << "- " << c.higher << (c.strict ? " > " : " >= ") << c.lower << ": gap " << format_fixed(c.gap, 4);
        if (c.strict) os << ", pooled SE " << format_fixed(c.pooled_se, 4);
        os << " -> " << (c.holds ? "holds" : "does not hold") << '\n';
    }
}

/// Summary CSV and Markdown next to an existing per-seed CSV.
inline std::vector<OrderingCheck> write_ablation_report(const std::vector<SeedResult>& rows, const std::string& dir) {
    auto summary = summarize(rows);
    auto checks = standard_orderings(summary);
    write_summary_csv(summary, dir + "/summary.csv");
    write_markdown_report(summary, checks, dir + "/report.md");
    return checks;
}

}  // namespace ciea
