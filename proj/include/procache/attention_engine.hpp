#pragma once

#include <cstdint>
#include <span>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "procache/core_types.hpp"

namespace procache {

/// Relative offsets beyond this are treated as this far apart.
inline constexpr Position kMaxRelativeDistance = 1024;

/// Linear language-model head: d -> vocab_size logits.
struct StepHead {
    Eigen::MatrixXd weight;  // vocab_size x d

    Eigen::VectorXd logits(const Eigen::VectorXd& hidden) const { return weight * hidden; }
    int vocab_size() const noexcept { return static_cast<int>(weight.rows()); }
};

/// Seeded, frozen weights of the attention-only decoder stack.
///
/// Keys and values at every layer are projections of the token's input embedding, queries are
/// projections of the residual stream. Cached keys/values therefore depend only on the token
/// itself and its fixed position, so they stay exact when other tokens are evicted.
struct AttentionWeights {
    int d = 0;
    int heads = 0;
    int layers = 0;
    std::vector<Eigen::MatrixXd> wq, wk, wv, wo;  // per layer, d x d
    std::vector<double> head_slopes;              // additive bias = -slope * min(distance, 1024)
    StepHead head;

    int head_dim() const noexcept { return d / heads; }
    double position_bias(int head_index, Position query_pos, Position key_pos) const;
};

/// Throws std::invalid_argument when d is not divisible by heads or a size is non-positive.
AttentionWeights make_attention_weights(int d, int heads, int layers, int vocab_size, std::uint64_t seed);

struct AppendResult {
    Eigen::VectorXd output;  // final residual stream, length d
    Eigen::VectorXd logits;  // length vocab_size
};

/// Incremental causal decoder with a per-token key/value store.
///
/// Appending a token costs L * (4 d^2 + 2 N d) + vocab_size * d multiply-adds, where N is the
/// number of stored tokens including the new one. Eviction drops stored keys/values without
/// touching the remaining positions and costs no multiply-adds.
class AttentionEngine {
public:
    explicit AttentionEngine(AttentionWeights weights);
    AttentionEngine(int d, int heads, int layers, int vocab_size, std::uint64_t seed)
        : AttentionEngine(make_attention_weights(d, heads, layers, vocab_size, seed)) {}

    /// The token must carry an entry_position beyond every stored position.
    AppendResult append_token(const Token& token);

    /// Throws std::invalid_argument if any id is unknown; nothing is removed in that case.
    void evict(std::span<const TokenId> ids);
    void evict(TokenId id) { evict(std::span<const TokenId>(&id, 1)); }

    std::uint64_t flops_snapshot() const noexcept { return flops_; }
    std::size_t size() const noexcept { return positions_.size(); }
    bool contains(TokenId id) const { return index_.contains(id); }
    std::vector<TokenId> ids() const { return ids_; }
    std::vector<Position> positions() const { return positions_; }
    const AttentionWeights& weights() const noexcept { return weights_; }

    /// Attention weights of the most recent append: [layer][head][key], keys in position order
    /// with the appended token last.
    const std::vector<std::vector<std::vector<double>>>& last_attention() const noexcept { return last_attention_; }

private:
    void reserve(std::size_t columns);

    AttentionWeights weights_;
    // Stored tokens in position order; column i of each key/value matrix belongs to positions_[i].
    std::vector<Position> positions_;
    std::vector<TokenId> ids_;
    std::vector<Eigen::MatrixXd> keys_;    // per layer, d x capacity
    std::vector<Eigen::MatrixXd> values_;  // per layer, d x capacity
    std::unordered_set<TokenId> index_;
    std::uint64_t flops_ = 0;
    std::vector<std::vector<std::vector<double>>> last_attention_;
};

/// Reference causal attention over a whole sequence, computed from scratch in matrix form.
/// Returns one output row per token. Tokens must be ordered by strictly increasing entry_position.
std::vector<Eigen::VectorXd> full_recompute(const AttentionWeights& weights, std::span<const Token> tokens);

}  // namespace procache
