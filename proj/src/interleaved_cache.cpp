#include "procache/interleaved_cache.hpp"

#include <stdexcept>

namespace procache {

std::string_view to_string(CacheOp op) {
    switch (op) {
        case CacheOp::Entry: return "entry";
        case CacheOp::ExitShort: return "exit_short";
        case CacheOp::ExitLong: return "exit_long";
    }
    return "unknown";
}

TokenTag tag_of(const Token& token) {
    return TokenTag{token.id, token.kind, token.frame_index, token.step_id};
}

nlohmann::json to_json(const CacheEvent& event) {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& tag : event.tokens) ids.push_back(tag.id);
    std::string kind;
    switch (event.op) {
        case CacheOp::Entry:
            kind = event.tokens.empty() ? "none" : std::string(to_string(event.tokens.front().kind));
            break;
        case CacheOp::ExitShort: kind = "visual"; break;
        case CacheOp::ExitLong: kind = "long_term"; break;
    }
    return nlohmann::json{{"t", event.t}, {"op", to_string(event.op)}, {"token_ids", ids}, {"kind", kind}};
}

InterleavedCache::InterleavedCache(std::size_t visual_capacity, std::optional<std::size_t> long_capacity)
    : visual_capacity_(visual_capacity), long_capacity_(long_capacity) {
    if (visual_capacity_ < 1) throw std::invalid_argument("visual capacity must be >= 1");
}

const Token& InterleavedCache::entry(Token token) {
    validate_token(token);
    if (ids_.contains(token.id)) {
        throw std::invalid_argument("token id " + std::to_string(token.id) + " is already in the cache");
    }
    if (token.entry_position) {
        throw std::invalid_argument("token id " + std::to_string(token.id) + " already carries an entry position");
    }
    const Position pos = next_position_++;
    token.entry_position = pos;
    switch (token.kind) {
        case TokenKind::VisualFrame: visual_order_.push_back(pos); break;
        case TokenKind::LongTermMarker: marker_order_.push_back(pos); break;
        case TokenKind::Text: ++text_count_; break;
        case TokenKind::Prompt: ++prompt_count_; break;
    }
    ids_.insert(token.id);
    if (log_events_) record(CacheOp::Entry, {tag_of(token)});
    return tokens_.emplace_hint(tokens_.end(), pos, std::move(token))->second;
}

Token InterleavedCache::erase_at(Store::iterator it) {
    Token token = std::move(it->second);
    tokens_.erase(it);
    ids_.erase(token.id);
    if (token.kind == TokenKind::Text) --text_count_;
    return token;
}

std::vector<Token> InterleavedCache::exit_short() {
    std::vector<Token> evicted;
    while (visual_order_.size() > visual_capacity_) {
        const Position pos = visual_order_.front();
        visual_order_.pop_front();
        evicted.push_back(erase_at(tokens_.find(pos)));
    }
    if (log_events_) {
        std::vector<TokenTag> tags;
        for (const auto& t : evicted) tags.push_back(tag_of(t));
        record(CacheOp::ExitShort, std::move(tags));
    }
    return evicted;
}

std::vector<std::vector<Token>> InterleavedCache::exit_long() {
    std::vector<std::vector<Token>> groups;
    while (long_capacity_ && marker_order_.size() > *long_capacity_) {
        const Position pos = marker_order_.front();
        auto it = tokens_.find(pos);
        const auto step = it->second.step_id;
        auto next = std::next(it);
        if (next == tokens_.end() || next->second.kind != TokenKind::Text || next->second.step_id != step) {
            throw StructuralError("long-term marker " + std::to_string(it->second.id) + " for step " +
                                  std::to_string(*step) + " is not followed by its text tokens");
        }
        marker_order_.pop_front();
        std::vector<Token> group;
        group.push_back(erase_at(it));
        while (next != tokens_.end() && next->second.kind == TokenKind::Text && next->second.step_id == step) {
            auto victim = next++;
            group.push_back(erase_at(victim));
        }
        groups.push_back(std::move(group));
    }
    if (log_events_) {
        std::vector<TokenTag> tags;
        for (const auto& g : groups)
            for (const auto& t : g) tags.push_back(tag_of(t));
        record(CacheOp::ExitLong, std::move(tags));
    }
    return groups;
}

std::vector<Token> InterleavedCache::live_tokens() const {
    std::vector<Token> out;
    out.reserve(tokens_.size());
    for (const auto& [pos, token] : tokens_) out.push_back(token);
    return out;
}

std::vector<TokenId> InterleavedCache::live_ids() const {
    std::vector<TokenId> out;
    out.reserve(tokens_.size());
    for (const auto& [pos, token] : tokens_) out.push_back(token.id);
    return out;
}

std::vector<CacheEvent> InterleavedCache::take_events() {
    std::vector<CacheEvent> out;
    out.swap(events_);
    return out;
}

void InterleavedCache::record(CacheOp op, std::vector<TokenTag> tags) {
    events_.push_back(CacheEvent{now_s_, op, std::move(tags)});
}

}  // namespace procache
