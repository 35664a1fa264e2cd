#include "procache/verbalizer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "hash_rng.hpp"

namespace procache {

void PredictionLog::push(std::int64_t frame, std::int64_t step_id) {
    if (tau_ == 0) return;
    entries_.push_back(Entry{frame, step_id});
    while (entries_.size() > tau_) entries_.pop_front();
}

bool PredictionLog::contains(std::int64_t step_id) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.step_id == step_id; });
}

bool should_verbalize(const PredictionLog& log, std::int64_t step_id) { return !log.contains(step_id); }

std::vector<StepRecord> group_consecutive(std::span<const Prediction> predictions, double fps,
                                          const std::function<int(std::int64_t)>& token_count) {
    if (!(fps > 0.0)) throw std::invalid_argument("group_consecutive: fps must be > 0");
    std::vector<StepRecord> out;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const Prediction& p = predictions[i];
        if (i > 0 && p.frame <= predictions[i - 1].frame) {
            throw std::invalid_argument("group_consecutive: frames must be strictly ascending (frame " +
                                        std::to_string(p.frame) + " after " +
                                        std::to_string(predictions[i - 1].frame) + ")");
        }
        const double end_s = static_cast<double>(p.frame + 1) / fps;
        if (!out.empty() && out.back().step_id == p.step_id) {
            out.back().end_s = end_s;
            continue;
        }
        StepRecord rec;
        rec.step_id = p.step_id;
        rec.label = "step_" + std::to_string(p.step_id);
        rec.start_s = static_cast<double>(p.frame) / fps;
        rec.end_s = end_s;
        rec.text_token_count = token_count ? token_count(p.step_id) : 1;
        out.push_back(std::move(rec));
    }
    return out;
}

TokenBudgetReport budget_report(const SimConfig& cfg, double horizon_s) {
    if (!(horizon_s > 0.0) || !std::isfinite(horizon_s)) {
        throw std::invalid_argument("budget_report: horizon_s must be > 0");
    }
    validate_config(cfg);
    TokenBudgetReport r;
    r.horizon_s = horizon_s;
    r.steps = horizon_s / cfg.mean_step_s;
    r.visual_tokens = cfg.fps * horizon_s * cfg.tokens_per_frame;
    r.verbalized_text_tokens = r.steps * cfg.tokens_per_step;
    r.marker_tokens = r.steps;
    r.reduction_ratio = r.visual_tokens / r.verbalized_text_tokens;
    r.reduction_ratio_with_markers = r.visual_tokens / (r.verbalized_text_tokens + r.marker_tokens);
    return r;
}

nlohmann::json to_json(const TokenBudgetReport& r) {
    return nlohmann::json{{"horizon_s", r.horizon_s},
                          {"steps", r.steps},
                          {"visual_tokens", r.visual_tokens},
                          {"verbalized_text_tokens", r.verbalized_text_tokens},
                          {"marker_tokens", r.marker_tokens},
                          {"verbalized_tokens_with_markers", r.verbalized_text_tokens + r.marker_tokens},
                          {"reduction_ratio", r.reduction_ratio},
                          {"reduction_ratio_with_markers", r.reduction_ratio_with_markers}};
}

Verbalizer::Verbalizer(int d, int vocab_size, double tokens_per_step, std::uint64_t seed)
    : d_(d), vocab_size_(vocab_size), tokens_per_step_(tokens_per_step), seed_(seed) {
    if (d < 1 || vocab_size < 1) throw std::invalid_argument("Verbalizer: d and vocab_size must be positive");
    if (!(tokens_per_step >= 1.0)) throw std::invalid_argument("Verbalizer: tokens_per_step must be >= 1");
    std::mt19937_64 rng(detail::mix64(seed, 0x766f636162ULL));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    table_.resize(static_cast<std::size_t>(vocab_size) * static_cast<std::size_t>(d));
    for (auto& x : table_) x = normal(rng);
    marker_.resize(static_cast<std::size_t>(d));
    for (auto& x : marker_) x = normal(rng);
}

int Verbalizer::text_token_count(std::int64_t step_id) const {
    const double base = std::floor(tokens_per_step_);
    const double frac = tokens_per_step_ - base;
    const double u = detail::unit_from_bits(detail::mix64(seed_ ^ 0x6c656eULL, static_cast<std::uint64_t>(step_id)));
    return static_cast<int>(base) + (u < frac ? 1 : 0);
}

std::vector<std::int32_t> Verbalizer::label_vocab_ids(std::int64_t step_id, int count) const {
    std::vector<std::int32_t> ids;
    ids.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        const std::uint64_t bits =
            detail::mix64(detail::mix64(seed_, static_cast<std::uint64_t>(step_id)), static_cast<std::uint64_t>(k));
        ids.push_back(static_cast<std::int32_t>(bits % static_cast<std::uint64_t>(vocab_size_)));
    }
    return ids;
}

std::string Verbalizer::label(std::int64_t step_id) const { return "step_" + std::to_string(step_id); }

StepRecord Verbalizer::describe(std::int64_t step_id, double start_s, double end_s) const {
    return StepRecord{step_id, label(step_id), start_s, end_s, text_token_count(step_id)};
}

std::vector<double> Verbalizer::vocab_embedding(std::int32_t vocab_id) const {
    if (vocab_id < 0 || vocab_id >= vocab_size_) throw std::out_of_range("vocab id out of range");
    const auto begin = table_.begin() + static_cast<std::ptrdiff_t>(vocab_id) * d_;
    return {begin, begin + d_};
}

std::vector<Token> Verbalizer::verbalize(const StepRecord& step, TokenIdAllocator& ids) const {
    if (step.text_token_count < 1) {
        throw std::invalid_argument("verbalize: step " + std::to_string(step.step_id) + " has no text tokens");
    }
    std::vector<Token> out;
    out.reserve(static_cast<std::size_t>(step.text_token_count) + 1);

    Token marker;
    marker.id = ids.next();
    marker.kind = TokenKind::LongTermMarker;
    marker.embedding = marker_;
    marker.step_id = step.step_id;
    out.push_back(std::move(marker));

    for (const std::int32_t vocab_id : label_vocab_ids(step.step_id, step.text_token_count)) {
        Token t;
        t.id = ids.next();
        t.kind = TokenKind::Text;
        t.embedding = vocab_embedding(vocab_id);
        t.step_id = step.step_id;
        t.vocab_id = vocab_id;
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace procache
