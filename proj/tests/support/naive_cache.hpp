#pragma once

// Literal list-scan transcription of the interleaved cache: count, index, pop.
// Used only as a differential oracle for procache::InterleavedCache.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <vector>

#include "procache/core_types.hpp"

namespace procache::testing {

class NaiveCache {
public:
    NaiveCache(std::size_t n_s, std::optional<std::size_t> n_l) : n_s_(n_s), n_l_(n_l) {}

    void entry(const Token& token) { tokens.push_back(token); }

    std::vector<Token> exit_short() {
        std::vector<Token> evicted;
        while (count(TokenKind::VisualFrame) > n_s_) {
            const std::size_t i = index(TokenKind::VisualFrame);
            evicted.push_back(tokens[i]);
            tokens.erase(tokens.begin() + static_cast<std::ptrdiff_t>(i));
        }
        return evicted;
    }

    std::vector<std::vector<Token>> exit_long() {
        std::vector<std::vector<Token>> groups;
        while (n_l_ && count(TokenKind::LongTermMarker) > *n_l_) {
            const std::size_t i = index(TokenKind::LongTermMarker);
            const auto step = tokens[i].step_id;
            std::vector<Token> group{tokens[i]};
            tokens.erase(tokens.begin() + static_cast<std::ptrdiff_t>(i));
            while (i < tokens.size() && tokens[i].kind == TokenKind::Text && tokens[i].step_id == step) {
                group.push_back(tokens[i]);
                tokens.erase(tokens.begin() + static_cast<std::ptrdiff_t>(i));
            }
            groups.push_back(std::move(group));
        }
        return groups;
    }

    std::size_t count(TokenKind kind) const {
        return static_cast<std::size_t>(
            std::count_if(tokens.begin(), tokens.end(), [&](const Token& t) { return t.kind == kind; }));
    }

    std::size_t index(TokenKind kind) const {
        return static_cast<std::size_t>(
            std::find_if(tokens.begin(), tokens.end(), [&](const Token& t) { return t.kind == kind; }) - tokens.begin());
    }

    std::vector<TokenId> ids() const {
        std::vector<TokenId> out;
        for (const auto& t : tokens) out.push_back(t.id);
        return out;
    }

    std::vector<Token> tokens;

private:
    std::size_t n_s_;
    std::optional<std::size_t> n_l_;
};

}  // namespace procache::testing
