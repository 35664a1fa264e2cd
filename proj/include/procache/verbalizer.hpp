#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "procache/core_types.hpp"

namespace procache {

/// The last `tau` predicted step ids, oldest first.
class PredictionLog {
public:
    struct Entry {
        std::int64_t frame = 0;
        std::int64_t step_id = 0;
    };

    explicit PredictionLog(std::size_t tau) : tau_(tau) {}

    void push(std::int64_t frame, std::int64_t step_id);
    bool contains(std::int64_t step_id) const;

    std::size_t tau() const noexcept { return tau_; }
    std::size_t size() const noexcept { return entries_.size(); }
    const std::deque<Entry>& entries() const noexcept { return entries_; }

private:
    std::size_t tau_;
    std::deque<Entry> entries_;
};

/// True iff `step_id` was not among the last tau predictions.
bool should_verbalize(const PredictionLog& log, std::int64_t step_id);

struct Prediction {
    std::int64_t frame = 0;
    std::int64_t step_id = 0;
};

/// Collapses maximal runs of equal step ids into step records. A run over frames [a, b]
/// spans [a / fps, (b + 1) / fps). `token_count` supplies text_token_count per step id
/// (1 when empty). Throws std::invalid_argument unless frames are strictly ascending.
std::vector<StepRecord> group_consecutive(std::span<const Prediction> predictions, double fps,
                                          const std::function<int(std::int64_t)>& token_count = {});

struct TokenBudgetReport {
    double horizon_s = 0.0;
    double steps = 0.0;
    double visual_tokens = 0.0;
    double verbalized_text_tokens = 0.0;  // excludes markers
    double marker_tokens = 0.0;
    double reduction_ratio = 0.0;               // visual / text
    double reduction_ratio_with_markers = 0.0;  // visual / (text + markers)
};

/// Expected token counts for a horizon: frame tokens at cfg.fps against one verbalized step
/// every cfg.mean_step_s seconds. Throws std::invalid_argument for horizon_s <= 0.
TokenBudgetReport budget_report(const SimConfig& cfg, double horizon_s);

nlohmann::json to_json(const TokenBudgetReport& report);

/// Turns step records into long-term tokens with seeded, per-vocab-id embeddings.
class Verbalizer {
public:
    Verbalizer(int d, int vocab_size, double tokens_per_step, std::uint64_t seed);
    explicit Verbalizer(const SimConfig& cfg) : Verbalizer(cfg.d, cfg.vocab_size, cfg.tokens_per_step, cfg.seed) {}

    /// Label length of a step class; averages to tokens_per_step over classes.
    int text_token_count(std::int64_t step_id) const;
    std::vector<std::int32_t> label_vocab_ids(std::int64_t step_id, int count) const;
    std::string label(std::int64_t step_id) const;
    StepRecord describe(std::int64_t step_id, double start_s, double end_s) const;

    /// [marker, text x step.text_token_count], all tagged with step.step_id and fresh ids.
    std::vector<Token> verbalize(const StepRecord& step, TokenIdAllocator& ids) const;

    std::vector<double> vocab_embedding(std::int32_t vocab_id) const;
    const std::vector<double>& marker_embedding() const noexcept { return marker_; }
    int vocab_size() const noexcept { return vocab_size_; }
    int dim() const noexcept { return d_; }

private:
    int d_;
    int vocab_size_;
    double tokens_per_step_;
    std::uint64_t seed_;
    std::vector<double> table_;  // vocab_size x d
    std::vector<double> marker_;
};

}  // namespace procache
