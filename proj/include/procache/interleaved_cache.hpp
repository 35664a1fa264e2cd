#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "procache/core_types.hpp"

namespace procache {

enum class CacheOp { Entry, ExitShort, ExitLong };

std::string_view to_string(CacheOp op);

/// Identity of a token as seen in the event log; no embedding.
struct TokenTag {
    TokenId id = 0;
    TokenKind kind = TokenKind::Text;
    std::optional<std::int64_t> frame_index;
    std::optional<std::int64_t> step_id;

    bool operator==(const TokenTag&) const = default;
};

TokenTag tag_of(const Token& token);

struct CacheEvent {
    double t = 0.0;
    CacheOp op = CacheOp::Entry;
    std::vector<TokenTag> tokens;  // entered or evicted, in order
};

/// One JSONL line: {t, op, token_ids, kind}.
nlohmann::json to_json(const CacheEvent& event);

/// Single-entry FIFO cache holding visual frame tokens and verbalized long-term text side by side.
///
/// Tokens are kept in entry order. Visual tokens leave through exit_short() once more than
/// `visual_capacity` of them are present; verbalized steps (a LongTermMarker plus the Text
/// tokens that follow it) leave as one group through exit_long() once more than
/// `long_capacity` markers are present. Prompt tokens are pinned. Neither exit runs
/// implicitly on entry.
class InterleavedCache {
public:
    InterleavedCache(std::size_t visual_capacity, std::optional<std::size_t> long_capacity);

    /// Appends at the tail and stamps the token's entry_position.
    /// Throws std::invalid_argument on a duplicate live id or an already-stamped token.
    const Token& entry(Token token);

    /// Evicts the oldest visual tokens until the visual count fits; returns them in eviction order.
    std::vector<Token> exit_short();

    /// Evicts the oldest verbalized step groups until the marker count fits.
    std::vector<std::vector<Token>> exit_long();

    std::vector<Token> live_tokens() const;
    std::vector<TokenId> live_ids() const;

    std::size_t size() const noexcept { return tokens_.size(); }
    bool empty() const noexcept { return tokens_.empty(); }
    std::size_t visual_count() const noexcept { return visual_order_.size(); }
    std::size_t long_count() const noexcept { return marker_order_.size(); }
    std::size_t text_count() const noexcept { return text_count_; }
    std::size_t prompt_count() const noexcept { return prompt_count_; }
    bool contains(TokenId id) const { return ids_.contains(id); }

    std::size_t visual_capacity() const noexcept { return visual_capacity_; }
    std::optional<std::size_t> long_capacity() const noexcept { return long_capacity_; }
    Position next_position() const noexcept { return next_position_; }

    void enable_event_log(bool on) { log_events_ = on; }
    void set_time(double t_s) noexcept { now_s_ = t_s; }
    const std::vector<CacheEvent>& events() const noexcept { return events_; }
    std::vector<CacheEvent> take_events();

private:
    using Store = std::map<Position, Token>;

    void record(CacheOp op, std::vector<TokenTag> tags);
    Token erase_at(Store::iterator it);

    std::size_t visual_capacity_;
    std::optional<std::size_t> long_capacity_;
    Store tokens_;
    std::deque<Position> visual_order_;
    std::deque<Position> marker_order_;
    std::unordered_set<TokenId> ids_;
    std::size_t text_count_ = 0;
    std::size_t prompt_count_ = 0;
    Position next_position_ = 0;

    bool log_events_ = false;
    double now_s_ = 0.0;
    std::vector<CacheEvent> events_;
};

}  // namespace procache
