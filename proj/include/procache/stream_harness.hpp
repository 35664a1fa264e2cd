#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "procache/core_types.hpp"
#include "procache/interleaved_cache.hpp"

namespace procache {

struct Frame {
    std::int64_t index = 0;
    double time_s = 0.0;
    std::int64_t step_id = 0;     // class label of the step in progress
    std::size_t step_index = 0;   // position in SyntheticStream::steps
    std::vector<double> feature;  // class prototype + noise
};

struct SyntheticStream {
    std::vector<StepRecord> steps;
    std::vector<Frame> frames;
    double fps = 4.0;
    std::uint64_t seed = 0;
    int num_classes = 0;
};

/// Steps with clamped-normal durations and no two adjacent steps of the same class.
/// Deterministic under cfg.seed. Throws std::invalid_argument for duration_s <= 0.
SyntheticStream generate_stream(const SimConfig& cfg, double duration_s);

/// Stand-in for the decoder's step prediction: the true step with probability 1 - noise_p,
/// otherwise a class drawn uniformly from all classes.
class OraclePredictor {
public:
    OraclePredictor(int num_classes, double noise_p, std::uint64_t seed);

    std::int64_t predict(const Frame& frame);

private:
    int num_classes_;
    double noise_p_;
    std::mt19937_64 rng_;
};

enum class StrategyKind { ProgressiveVisual, VerbalizedSeparate, Interleaved };

/// "a1", "a2", "b".
std::string_view to_string(StrategyKind kind);
StrategyKind strategy_from_string(std::string_view name);

struct TraceRow {
    std::int64_t frame = 0;
    double t_s = 0.0;
    std::string strategy;
    std::int64_t live_tokens = 0;
    std::uint64_t append_flops = 0;
    std::uint64_t recompute_flops = 0;
    std::uint64_t mem_bytes_proxy = 0;
    std::int64_t pred = 0;
    bool correct = false;
    bool verbalized = false;
    // In-memory only.
    std::int64_t visual_tokens = 0;
    std::int64_t long_entries = 0;
    std::int64_t long_tokens = 0;
    std::int64_t wall_ns = 0;

    std::uint64_t frame_flops() const noexcept { return append_flops + recompute_flops; }
};

struct StrategyTrace {
    StrategyKind kind = StrategyKind::Interleaved;
    std::vector<TraceRow> rows;
    bool truncated = false;
    std::optional<std::int64_t> truncation_frame;
    std::vector<CacheEvent> events;  // Interleaved only, when requested
};

struct RunOptions {
    bool log_events = false;
};

/// Replays the stream frame by frame through one caching strategy.
///
/// Every frame enters its visual tokens and then decodes the predicted step's marker + text
/// tokens. Interleaved keeps the decoded tokens in place when the prediction is new within the
/// last tau predictions and rolls them back otherwise. VerbalizedSeparate keeps long-term text
/// ahead of the short-term frames, so a new long-term entry forces every short-term token to be
/// re-encoded; that work lands in recompute_flops. ProgressiveVisual never verbalizes or
/// evicts. When cfg.memory_cap_tokens is set, the run stops after the first frame whose live
/// token count exceeds it.
StrategyTrace run_strategy(StrategyKind kind, const SyntheticStream& stream, const SimConfig& cfg,
                           const RunOptions& options = {});

/// Runs the strategies concurrently, one stream copy each; traces come back in input order.
std::vector<StrategyTrace> run_strategies(std::span<const StrategyKind> kinds, const SyntheticStream& stream,
                                          const SimConfig& cfg, const RunOptions& options = {});

struct AffineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

/// Ordinary least squares; r2 is 1 for an exactly affine series with spread.
AffineFit fit_affine(std::span<const double> x, std::span<const double> y);

enum class GrowthClass { Linear, Sublinear, Bounded, Indeterminate };

std::string_view to_string(GrowthClass cls);

struct GrowthFit {
    GrowthClass cls = GrowthClass::Indeterminate;
    double exponent = 0.0;
    double r2 = 0.0;
};

/// The exponent is the log-log slope of tokens gained since the first frame against frames
/// elapsed. Bounded when the second half of the series stays within 5% of the first half's peak;
/// otherwise linear for exponent >= 0.95 and sublinear for exponent <= 0.8.
/// Throws std::invalid_argument for fewer than 100 samples.
GrowthFit fit_growth(std::span<const double> live_tokens);
GrowthFit fit_growth(const StrategyTrace& trace);

double spike_ratio(const StrategyTrace& trace);  // max / median per-frame FLOPs
double accuracy(const StrategyTrace& trace);

/// Mean over feature dims of the within-segment variance of the class's frames, averaged over
/// its segments with at least two frames. Throws std::invalid_argument when no such segment exists.
double temporal_variance(const SyntheticStream& stream, std::int64_t class_id);

/// (class, variance) for every class with a usable segment, highest variance first.
std::vector<std::pair<std::int64_t, double>> per_class_temporal_variance(const SyntheticStream& stream);

void write_trace_csv(std::ostream& out, const StrategyTrace& trace, bool header = true);
/// Throws std::invalid_argument on a malformed or empty trace.
std::vector<TraceRow> read_trace_csv(std::istream& in);

nlohmann::json summarize(std::span<const StrategyTrace> traces, const SimConfig& cfg, double duration_s);

}  // namespace procache
