#pragma once

/// \file data.hpp
/// \brief Corpus, query and qrels records plus their on-disk formats.
///
/// Corpus JSONL:  {"id": str, "text": str, "patches": [[float,...],...]}  (patches optional)
/// Queries JSONL: {"qid": str, "text": str, "positives": [str,...]}
/// Qrels TSV:     qid<TAB>docid

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "ciea/errors.hpp"
#include "ciea/vocab.hpp"

namespace ciea {

/// Raw per-patch features of one image: rows x cols, row-major.
struct PatchGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct Document {
    std::string id;
    std::string raw_text;
    TokenSequence text;
    std::optional<PatchGrid> patches;

    bool multimodal() const noexcept { return patches.has_value(); }
};

struct QueryRecord {
    std::string qid;
    std::string raw_text;
    TokenSequence text;
    std::vector<std::string> positives;
};

using Qrels = std::map<std::string, std::set<std::string>>;

namespace detail {

inline std::ifstream open_input(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return is;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    return os;
}

inline nlohmann::json parse_line(const std::string& line, std::size_t lineno) {
    try {
        auto j = nlohmann::json::parse(line);
        if (!j.is_object()) throw ParseError("expected a JSON object", lineno);
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what(), lineno);
    }
}

inline std::string require_string(const nlohmann::json& j, const char* key, std::size_t lineno) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw ParseError(std::string("missing string field \"") + key + "\"", lineno);
    return it->get<std::string>();
}

}  // namespace detail

inline PatchGrid patch_grid_from_json(const nlohmann::json& j, std::size_t lineno) {
    if (!j.is_array() || j.empty()) throw ParseError("\"patches\" must be a nonempty array of rows", lineno);
    PatchGrid g;
    g.rows = j.size();
    for (const auto& row : j) {
        if (!row.is_array() || row.empty()) throw ParseError("patch rows must be nonempty numeric arrays", lineno);
        if (g.cols == 0) g.cols = row.size();
        if (row.size() != g.cols) throw ParseError("patch rows have unequal lengths", lineno);
        for (const auto& x : row) {
            if (!x.is_number()) throw ParseError("non-numeric patch value", lineno);
            const double v = x.get<double>();
            if (!std::isfinite(v)) throw ParseError("non-finite patch value", lineno);
            g.values.push_back(v);
        }
    }
    return g;
}

inline nlohmann::json patch_grid_to_json(const PatchGrid& g) {
    auto rows = nlohmann::json::array();
    for (std::size_t r = 0; r < g.rows; ++r) {
        auto row = nlohmann::json::array();
        for (std::size_t c = 0; c < g.cols; ++c) row.push_back(g.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Reads a corpus; token sequences are left empty until tokenize_corpus().
inline std::vector<Document> load_corpus(const std::string& path) {
    auto is = detail::open_input(path);
    std::vector<Document> docs;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = detail::parse_line(line, lineno);
        Document d;
        d.id = detail::require_string(j, "id", lineno);
        auto text = j.find("text");
        if (text != j.end() && !text->is_null()) {
            if (!text->is_string()) throw ParseError("\"text\" must be a string", lineno);
            d.raw_text = text->get<std::string>();
        }
        if (auto p = j.find("patches"); p != j.end() && !p->is_null()) d.patches = patch_grid_from_json(*p, lineno);
        if (d.raw_text.empty() && !d.patches) {
            throw ParseError("document \"" + d.id + "\" has neither text nor patches", lineno);
        }
        if (!seen.insert(d.id).second) throw ReferentialError("duplicate document id \"" + d.id + "\"");
        docs.push_back(std::move(d));
    }
    return docs;
}

inline std::vector<QueryRecord> load_queries(const std::string& path) {
    auto is = detail::open_input(path);
    std::vector<QueryRecord> queries;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = detail::parse_line(line, lineno);
        QueryRecord q;
        q.qid = detail::require_string(j, "qid", lineno);
        q.raw_text = detail::require_string(j, "text", lineno);
        auto pos = j.find("positives");
        if (pos == j.end() || !pos->is_array() || pos->empty()) {
            throw ParseError("\"positives\" must be a nonempty array", lineno);
        }
        for (const auto& p : *pos) {
            if (!p.is_string()) throw ParseError("positive ids must be strings", lineno);
            q.positives.push_back(p.get<std::string>());
        }
        if (!seen.insert(q.qid).second) throw ReferentialError("duplicate query id \"" + q.qid + "\"");
        queries.push_back(std::move(q));
    }
    return queries;
}

/// Every positive must name a corpus document.
inline void validate_references(const std::vector<QueryRecord>& queries, const std::vector<Document>& corpus) {
    std::unordered_set<std::string> ids;
    for (const auto& d : corpus) ids.insert(d.id);
    for (const auto& q : queries)
        for (const auto& p : q.positives)
            if (!ids.count(p)) {
                throw ReferentialError("query \"" + q.qid + "\" names unknown positive \"" + p + "\"");
            }
}

inline void save_corpus(const std::vector<Document>& docs, const std::string& path) {
    auto os = detail::open_output(path);
    for (const auto& d : docs) {
        nlohmann::json j;
        j["id"] = d.id;
        j["text"] = d.raw_text;
        if (d.patches) j["patches"] = patch_grid_to_json(*d.patches);
        os << j.dump() << '\n';
    }
}

inline void save_queries(const std::vector<QueryRecord>& queries, const std::string& path) {
    auto os = detail::open_output(path);
    for (const auto& q : queries) {
        nlohmann::json j;
        j["qid"] = q.qid;
        j["text"] = q.raw_text;
        j["positives"] = q.positives;
        os << j.dump() << '\n';
    }
}

inline Qrels qrels_from_queries(const std::vector<QueryRecord>& queries) {
    Qrels qrels;
    for (const auto& q : queries) qrels[q.qid].insert(q.positives.begin(), q.positives.end());
    return qrels;
}

inline void save_qrels(const Qrels& qrels, const std::string& path) {
    auto os = detail::open_output(path);
    for (const auto& [qid, docs] : qrels)
        for (const auto& d : docs) os << qid << '\t' << d << '\n';
}

inline Qrels load_qrels(const std::string& path) {
    auto is = detail::open_input(path);
    Qrels qrels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size() ||
            line.find('\t', tab + 1) != std::string::npos) {
            throw ParseError("expected \"qid<TAB>docid\"", lineno);
        }
        qrels[line.substr(0, tab)].insert(line.substr(tab + 1));
    }
    return qrels;
}

inline void tokenize_corpus(std::vector<Document>& docs, const Vocabulary& vocab, std::size_t max_len) {
    for (auto& d : docs) d.text = vocab.tokenize(d.raw_text, max_len);
}

inline void tokenize_queries(std::vector<QueryRecord>& queries, const Vocabulary& vocab, std::size_t max_len) {
    for (auto& q : queries) q.text = vocab.tokenize(q.raw_text, max_len);
}

/// Corpus documents by id.
inline std::unordered_map<std::string, std::size_t> index_by_id(const std::vector<Document>& docs) {
    std::unordered_map<std::string, std::size_t> m;
    for (std::size_t i = 0; i < docs.size(); ++i) m.emplace(docs[i].id, i);
    return m;
}

}  // namespace ciea
