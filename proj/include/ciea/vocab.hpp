#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ciea/errors.hpp"

namespace ciea {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kMaskId = 1;
inline constexpr TokenId kStartId = 2;
inline constexpr TokenId kEndId = 3;
inline constexpr std::size_t kReservedTokens = 4;
inline constexpr std::size_t kDefaultMaxTextLen = 128;

/// Lowercased words; any character that is not alphanumeric separates words.
inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

class Vocabulary {
public:
    Vocabulary() : tokens_{"<pad>", "<mask>", "<start>", "<end>"} { reindex(); }

    /// Admits words seen at least `min_count` times. IDs after the reserved
    /// block follow (count desc, token asc).
    static Vocabulary build(const std::vector<std::string>& texts, std::size_t min_count) {
        if (texts.empty()) throw ContractError("build_vocab: no input texts");
        std::map<std::string, std::size_t> counts;
        for (const auto& t : texts)
            for (auto& w : split_words(t)) ++counts[w];
        std::vector<std::pair<std::string, std::size_t>> admitted;
        for (auto& [w, c] : counts)
            if (c >= min_count) admitted.emplace_back(w, c);
        std::stable_sort(admitted.begin(), admitted.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        Vocabulary v;
        for (auto& [w, c] : admitted) v.tokens_.push_back(w);
        v.reindex();
        return v;
    }

    /// Rebuilds a vocabulary from its tokens in ID order (reserved block included).
    static Vocabulary from_tokens(std::vector<std::string> tokens) {
        Vocabulary v;
        if (tokens.size() < kReservedTokens || !std::equal(v.tokens_.begin(), v.tokens_.end(), tokens.begin())) {
            throw ContractError("vocabulary must start with <pad> <mask> <start> <end>");
        }
        v.tokens_ = std::move(tokens);
        v.reindex();
        return v;
    }

    std::size_t size() const noexcept { return tokens_.size(); }

    std::optional<TokenId> find(std::string_view token) const {
        auto it = index_.find(std::string(token));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& token(TokenId id) const {
        if (id >= tokens_.size()) throw ContractError("token id " + std::to_string(id) + " out of range");
        return tokens_[id];
    }

    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    /// Out-of-vocabulary words are dropped; the result keeps the first max_len IDs.
    TokenSequence tokenize(std::string_view text, std::size_t max_len = kDefaultMaxTextLen) const {
        TokenSequence ids;
        for (const auto& w : split_words(text)) {
            if (ids.size() >= max_len) break;
            if (auto id = find(w); id && *id >= kReservedTokens) ids.push_back(*id);
        }
        return ids;
    }

    std::string detokenize(const TokenSequence& ids) const {
        std::string out;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i) out.push_back(' ');
            out += token(ids[i]);
        }
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot write vocabulary to " + path);
        for (const auto& t : tokens_) os << t << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("cannot read vocabulary from " + path);
        std::vector<std::string> tokens;
        std::string line;
        while (std::getline(is, line)) tokens.push_back(line);
        return from_tokens(std::move(tokens));
    }

private:
    void reindex() {
        index_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
                throw ContractError("duplicate vocabulary token '" + tokens_[i] + "'");
            }
        }
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

}  // namespace ciea
