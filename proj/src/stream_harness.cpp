#include "procache/stream_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <future>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "hash_rng.hpp"
#include "procache/attention_engine.hpp"
#include "procache/verbalizer.hpp"

namespace procache {

SyntheticStream generate_stream(const SimConfig& cfg_in, double duration_s) {
    const SimConfig cfg = validate_config(cfg_in);
    if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
        throw std::invalid_argument("generate_stream: duration_s must be > 0");
    }
    const Verbalizer verbalizer(cfg);
    std::mt19937_64 rng(detail::mix64(cfg.seed, 0x73747265616dULL));

    SyntheticStream s;
    s.fps = cfg.fps;
    s.seed = cfg.seed;
    s.num_classes = cfg.num_classes;

    std::vector<std::vector<double>> prototypes(static_cast<std::size_t>(cfg.num_classes));
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& p : prototypes) {
        p.resize(static_cast<std::size_t>(cfg.d));
        for (auto& x : p) x = unit(rng);
    }

    std::normal_distribution<double> duration(cfg.mean_step_s, cfg.step_s_jitter);
    const double min_step = std::max(1.0 / cfg.fps, 0.25 * cfg.mean_step_s);
    const double max_step = 4.0 * cfg.mean_step_s;
    std::uniform_int_distribution<int> next_class(0, cfg.num_classes - 2);
    double t = 0.0;
    std::int64_t prev = -1;
    while (t < duration_s) {
        const double len = std::clamp(duration(rng), min_step, max_step);
        std::int64_t cls = 0;
        if (prev < 0) {
            cls = std::uniform_int_distribution<int>(0, cfg.num_classes - 1)(rng);
        } else {
            cls = next_class(rng);
            if (cls >= prev) ++cls;  // skip the previous class
        }
        const double end = std::min(t + len, duration_s);
        s.steps.push_back(verbalizer.describe(cls, t, end));
        prev = cls;
        t = end;
    }

    const auto n_frames = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(duration_s * cfg.fps + 1e-9)));
    std::normal_distribution<double> noise(0.0, cfg.feature_noise);
    std::size_t step = 0;
    s.frames.reserve(static_cast<std::size_t>(n_frames));
    for (std::int64_t i = 0; i < n_frames; ++i) {
        Frame f;
        f.index = i;
        f.time_s = static_cast<double>(i) / cfg.fps;
        while (step + 1 < s.steps.size() && f.time_s >= s.steps[step].end_s) ++step;
        f.step_index = step;
        f.step_id = s.steps[step].step_id;
        f.feature = prototypes[static_cast<std::size_t>(f.step_id)];
        if (cfg.feature_noise > 0.0)
            for (auto& x : f.feature) x += noise(rng);
        s.frames.push_back(std::move(f));
    }
    return s;
}

OraclePredictor::OraclePredictor(int num_classes, double noise_p, std::uint64_t seed)
    : num_classes_(num_classes), noise_p_(noise_p), rng_(detail::mix64(seed, 0x70726564ULL)) {
    if (num_classes < 1) throw std::invalid_argument("OraclePredictor: num_classes must be >= 1");
    if (!(noise_p >= 0.0 && noise_p <= 1.0)) throw std::invalid_argument("OraclePredictor: noise_p must lie in [0, 1]");
}

std::int64_t OraclePredictor::predict(const Frame& frame) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (noise_p_ > 0.0 && coin(rng_) < noise_p_) {
        std::uniform_int_distribution<std::int64_t> any(0, num_classes_ - 1);
        return any(rng_);
    }
    return frame.step_id;
}

std::string_view to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::ProgressiveVisual: return "a1";
        case StrategyKind::VerbalizedSeparate: return "a2";
        case StrategyKind::Interleaved: return "b";
    }
    return "?";
}

StrategyKind strategy_from_string(std::string_view name) {
    if (name == "a1") return StrategyKind::ProgressiveVisual;
    if (name == "a2") return StrategyKind::VerbalizedSeparate;
    if (name == "b") return StrategyKind::Interleaved;
    throw std::invalid_argument("unknown strategy '" + std::string(name) + "' (expected a1, a2 or b)");
}

namespace {

using Clock = std::chrono::steady_clock;

// Everything a strategy run needs besides its own cache layout.
struct RunContext {
    const SyntheticStream& stream;
    const SimConfig& cfg;
    AttentionEngine engine;
    Verbalizer verbalizer;
    OraclePredictor predictor;
    PredictionLog log;
    TokenIdAllocator ids;
    std::vector<std::vector<double>> slot_offsets;

    RunContext(const SyntheticStream& s, const SimConfig& c)
        : stream(s),
          cfg(c),
          engine(c.d, c.heads, c.layers, c.vocab_size, c.seed),
          verbalizer(c),
          predictor(c.num_classes, c.predictor_noise, c.seed),
          log(static_cast<std::size_t>(c.tau)) {
        std::mt19937_64 rng(detail::mix64(c.seed, 0x736c6f74ULL));
        std::normal_distribution<double> normal(0.0, 0.1);
        slot_offsets.resize(static_cast<std::size_t>(c.tokens_per_frame));
        for (auto& v : slot_offsets) {
            v.resize(static_cast<std::size_t>(c.d));
            for (auto& x : v) x = normal(rng);
        }
    }

    std::vector<Token> frame_tokens(const Frame& f) {
        std::vector<Token> out;
        for (const auto& offset : slot_offsets) {
            Token t;
            t.id = ids.next();
            t.kind = TokenKind::VisualFrame;
            t.frame_index = f.index;
            t.embedding = f.feature;
            for (std::size_t k = 0; k < offset.size(); ++k) t.embedding[k] += offset[k];
            out.push_back(std::move(t));
        }
        return out;
    }

    std::vector<Token> prompt_tokens() {
        std::vector<Token> out;
        for (int i = 0; i < cfg.prompt_tokens; ++i) {
            Token t;
            t.id = ids.next();
            t.kind = TokenKind::Prompt;
            t.embedding = verbalizer.vocab_embedding(static_cast<std::int32_t>(i % cfg.vocab_size));
            out.push_back(std::move(t));
        }
        return out;
    }

    std::vector<Token> decode(std::int64_t pred, const Frame& f) {
        return verbalizer.verbalize(verbalizer.describe(pred, f.time_s, f.time_s + 1.0 / cfg.fps), ids);
    }

    // Decodes tokens that are not kept: appended at scratch positions past `next_free`, then evicted.
    void decode_and_discard(std::vector<Token> tokens, Position next_free) {
        std::vector<TokenId> scratch;
        for (auto& t : tokens) {
            t.entry_position = next_free++;
            engine.append_token(t);
            scratch.push_back(t.id);
        }
        engine.evict(scratch);
    }

    void evict(const std::vector<Token>& tokens) {
        std::vector<TokenId> victims;
        for (const auto& t : tokens) victims.push_back(t.id);
        engine.evict(victims);
    }
};

TraceRow begin_row(const Frame& f, StrategyKind kind) {
    TraceRow row;
    row.frame = f.index;
    row.t_s = f.time_s;
    row.strategy = std::string(to_string(kind));
    return row;
}

void finish_row(TraceRow& row, const RunContext& ctx, std::int64_t live, std::int64_t pred, const Frame& f,
                Clock::time_point started) {
    row.live_tokens = live;
    row.mem_bytes_proxy = static_cast<std::uint64_t>(live) * static_cast<std::uint64_t>(ctx.cfg.d) * sizeof(double);
    row.pred = pred;
    row.correct = pred == f.step_id;
    row.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - started).count();
}

bool over_cap(const SimConfig& cfg, std::int64_t live) {
    return cfg.memory_cap_tokens && live > *cfg.memory_cap_tokens;
}

StrategyTrace run_interleaved(RunContext& ctx, const RunOptions& options) {
    const SimConfig& cfg = ctx.cfg;
    InterleavedCache cache(static_cast<std::size_t>(cfg.N_S) * static_cast<std::size_t>(cfg.tokens_per_frame),
                           cfg.N_L ? std::optional<std::size_t>(static_cast<std::size_t>(*cfg.N_L)) : std::nullopt);
    cache.enable_event_log(options.log_events);
    StrategyTrace trace;
    trace.kind = StrategyKind::Interleaved;

    for (auto& t : ctx.prompt_tokens()) ctx.engine.append_token(cache.entry(std::move(t)));

    for (const Frame& f : ctx.stream.frames) {
        const auto started = Clock::now();
        TraceRow row = begin_row(f, trace.kind);
        cache.set_time(f.time_s);
        const std::uint64_t flops0 = ctx.engine.flops_snapshot();

        for (auto& t : ctx.frame_tokens(f)) ctx.engine.append_token(cache.entry(std::move(t)));
        ctx.evict(cache.exit_short());

        const std::int64_t pred = ctx.predictor.predict(f);
        std::vector<Token> decoded = ctx.decode(pred, f);
        if (should_verbalize(ctx.log, pred)) {
            for (auto& t : decoded) ctx.engine.append_token(cache.entry(std::move(t)));
            for (const auto& group : cache.exit_long()) ctx.evict(group);
            row.verbalized = true;
        } else {
            ctx.decode_and_discard(std::move(decoded), cache.next_position());
        }
        ctx.log.push(f.index, pred);

        row.append_flops = ctx.engine.flops_snapshot() - flops0;
        row.visual_tokens = static_cast<std::int64_t>(cache.visual_count());
        row.long_entries = static_cast<std::int64_t>(cache.long_count());
        row.long_tokens = static_cast<std::int64_t>(cache.long_count() + cache.text_count());
        const auto live = static_cast<std::int64_t>(cache.size());
        finish_row(row, ctx, live, pred, f, started);
        trace.rows.push_back(std::move(row));
        if (over_cap(cfg, live)) {
            trace.truncated = true;
            trace.truncation_frame = f.index;
            break;
        }
    }
    trace.events = cache.take_events();
    return trace;
}

StrategyTrace run_progressive_visual(RunContext& ctx) {
    StrategyTrace trace;
    trace.kind = StrategyKind::ProgressiveVisual;
    Position next_pos = 0;
    std::int64_t live = 0;
    for (auto& t : ctx.prompt_tokens()) {
        t.entry_position = next_pos++;
        ctx.engine.append_token(t);
        ++live;
    }
    std::int64_t visual = 0;
    for (const Frame& f : ctx.stream.frames) {
        const auto started = Clock::now();
        TraceRow row = begin_row(f, trace.kind);
        const std::uint64_t flops0 = ctx.engine.flops_snapshot();
        for (auto& t : ctx.frame_tokens(f)) {
            t.entry_position = next_pos++;
            ctx.engine.append_token(t);
            ++live;
            ++visual;
        }
        const std::int64_t pred = ctx.predictor.predict(f);
        ctx.decode_and_discard(ctx.decode(pred, f), next_pos);
        ctx.log.push(f.index, pred);

        row.append_flops = ctx.engine.flops_snapshot() - flops0;
        row.visual_tokens = visual;
        finish_row(row, ctx, live, pred, f, started);
        trace.rows.push_back(std::move(row));
        if (over_cap(ctx.cfg, live)) {
            trace.truncated = true;
            trace.truncation_frame = f.index;
            break;
        }
    }
    return trace;
}

StrategyTrace run_verbalized_separate(RunContext& ctx) {
    const SimConfig& cfg = ctx.cfg;
    StrategyTrace trace;
    trace.kind = StrategyKind::VerbalizedSeparate;

    // Layout in the decoder: [prompt][long-term groups][short-term frames].
    Position next_pos = 0;
    std::vector<Token> prompt = ctx.prompt_tokens();
    for (auto& t : prompt) {
        t.entry_position = next_pos++;
        ctx.engine.append_token(t);
    }
    std::deque<std::vector<Token>> long_groups;
    std::deque<std::vector<Token>> short_frames;
    std::int64_t long_tokens = 0;

    auto append_fresh = [&](Token& t) {
        t.entry_position = next_pos++;
        ctx.engine.append_token(t);
    };

    for (const Frame& f : ctx.stream.frames) {
        const auto started = Clock::now();
        TraceRow row = begin_row(f, trace.kind);
        const std::uint64_t flops0 = ctx.engine.flops_snapshot();

        std::vector<Token> frame = ctx.frame_tokens(f);
        for (auto& t : frame) append_fresh(t);
        short_frames.push_back(std::move(frame));
        while (short_frames.size() > static_cast<std::size_t>(cfg.N_S)) {
            ctx.evict(short_frames.front());
            short_frames.pop_front();
        }

        const std::int64_t pred = ctx.predictor.predict(f);
        std::vector<Token> decoded = ctx.decode(pred, f);
        const bool verbalize = should_verbalize(ctx.log, pred);
        ctx.decode_and_discard(decoded, next_pos);
        row.append_flops = ctx.engine.flops_snapshot() - flops0;

        if (verbalize) {
            // The long-term block sits ahead of the short-term block, so inserting text
            // invalidates every short-term key/value.
            const std::uint64_t before = ctx.engine.flops_snapshot();
            for (const auto& fr : short_frames) ctx.evict(fr);
            for (auto& t : decoded) {
                t.entry_position.reset();
                append_fresh(t);
            }
            long_tokens += static_cast<std::int64_t>(decoded.size());
            long_groups.push_back(std::move(decoded));
            while (cfg.N_L && long_groups.size() > static_cast<std::size_t>(*cfg.N_L)) {
                ctx.evict(long_groups.front());
                long_tokens -= static_cast<std::int64_t>(long_groups.front().size());
                long_groups.pop_front();
            }
            for (auto& fr : short_frames)
                for (auto& t : fr) append_fresh(t);
            row.recompute_flops = ctx.engine.flops_snapshot() - before;
            row.verbalized = true;
        }
        ctx.log.push(f.index, pred);

        const auto visual = static_cast<std::int64_t>(short_frames.size()) * cfg.tokens_per_frame;
        row.visual_tokens = visual;
        row.long_entries = static_cast<std::int64_t>(long_groups.size());
        row.long_tokens = long_tokens;
        const std::int64_t live = static_cast<std::int64_t>(prompt.size()) + long_tokens + visual;
        finish_row(row, ctx, live, pred, f, started);
        trace.rows.push_back(std::move(row));
        if (over_cap(cfg, live)) {
            trace.truncated = true;
            trace.truncation_frame = f.index;
            break;
        }
    }
    return trace;
}

}  // namespace

StrategyTrace run_strategy(StrategyKind kind, const SyntheticStream& stream, const SimConfig& cfg_in,
                           const RunOptions& options) {
    const SimConfig cfg = validate_config(cfg_in);
    if (stream.frames.empty()) throw std::invalid_argument("run_strategy: stream has no frames");
    for (const Frame& f : stream.frames) {
        if (static_cast<int>(f.feature.size()) != cfg.d) {
            throw std::invalid_argument("run_strategy: frame feature dim does not match cfg.d");
        }
    }
    RunContext ctx(stream, cfg);
    switch (kind) {
        case StrategyKind::ProgressiveVisual: return run_progressive_visual(ctx);
        case StrategyKind::VerbalizedSeparate: return run_verbalized_separate(ctx);
        case StrategyKind::Interleaved: return run_interleaved(ctx, options);
    }
    throw std::invalid_argument("run_strategy: unknown strategy");
}

std::vector<StrategyTrace> run_strategies(std::span<const StrategyKind> kinds, const SyntheticStream& stream,
                                          const SimConfig& cfg, const RunOptions& options) {
    std::vector<std::future<StrategyTrace>> jobs;
    for (const StrategyKind kind : kinds) {
        jobs.push_back(std::async(std::launch::async, [kind, stream, cfg, options] {
            return run_strategy(kind, stream, cfg, options);
        }));
    }
    std::vector<StrategyTrace> out;
    for (auto& job : jobs) out.push_back(job.get());
    return out;
}

AffineFit fit_affine(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_affine: need >= 2 paired samples");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("fit_affine: x has no spread");
    AffineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (fit.intercept + fit.slope * x[i]);
        ss_res += r * r;
    }
    fit.r2 = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
    return fit;
}

std::string_view to_string(GrowthClass cls) {
    switch (cls) {
        case GrowthClass::Linear: return "linear";
        case GrowthClass::Sublinear: return "sublinear";
        case GrowthClass::Bounded: return "bounded";
        case GrowthClass::Indeterminate: return "indeterminate";
    }
    return "?";
}

GrowthFit fit_growth(std::span<const double> live) {
    if (live.size() < 100) throw std::invalid_argument("fit_growth: need at least 100 frames");
    GrowthFit out;
    const auto [lo, hi] = std::minmax_element(live.begin(), live.end());
    if (*lo == *hi) {
        out.cls = GrowthClass::Bounded;
        out.exponent = 0.0;
        out.r2 = 1.0;
        return out;
    }
    // Growth since the first frame, so fixed overhead (prompt, first frame) does not bend the fit.
    std::vector<double> lx, ly;
    for (std::size_t i = 1; i < live.size(); ++i) {
        const double gained = live[i] - live[0];
        if (gained <= 0.0) continue;
        lx.push_back(std::log(static_cast<double>(i)));
        ly.push_back(std::log(gained));
    }
    const AffineFit fit = fit_affine(lx, ly);
    out.exponent = fit.slope;
    out.r2 = fit.r2;

    const std::size_t half = live.size() / 2;
    const double first_peak = *std::max_element(live.begin(), live.begin() + static_cast<std::ptrdiff_t>(half));
    const double second_peak = *std::max_element(live.begin() + static_cast<std::ptrdiff_t>(half), live.end());
    if (second_peak <= 1.05 * first_peak) out.cls = GrowthClass::Bounded;
    else if (out.exponent >= 0.95) out.cls = GrowthClass::Linear;
    else if (out.exponent <= 0.8) out.cls = GrowthClass::Sublinear;
    else out.cls = GrowthClass::Indeterminate;
    return out;
}

GrowthFit fit_growth(const StrategyTrace& trace) {
    std::vector<double> live;
    live.reserve(trace.rows.size());
    for (const auto& r : trace.rows) live.push_back(static_cast<double>(r.live_tokens));
    return fit_growth(live);
}

double spike_ratio(const StrategyTrace& trace) {
    if (trace.rows.empty()) throw std::invalid_argument("spike_ratio: empty trace");
    std::vector<double> f;
    for (const auto& r : trace.rows) f.push_back(static_cast<double>(r.frame_flops()));
    const double peak = *std::max_element(f.begin(), f.end());
    const auto mid = f.begin() + static_cast<std::ptrdiff_t>(f.size() / 2);
    std::nth_element(f.begin(), mid, f.end());
    double median = *mid;
    if (f.size() % 2 == 0) median = 0.5 * (median + *std::max_element(f.begin(), mid));
    return peak / median;
}

double accuracy(const StrategyTrace& trace) {
    if (trace.rows.empty()) return 0.0;
    const auto hits = std::count_if(trace.rows.begin(), trace.rows.end(), [](const TraceRow& r) { return r.correct; });
    return static_cast<double>(hits) / static_cast<double>(trace.rows.size());
}

double temporal_variance(const SyntheticStream& stream, std::int64_t class_id) {
    std::map<std::size_t, std::vector<const Frame*>> segments;
    for (const Frame& f : stream.frames)
        if (f.step_id == class_id) segments[f.step_index].push_back(&f);

    double total = 0.0;
    int used = 0;
    for (const auto& [index, seg] : segments) {
        if (seg.size() < 2) continue;
        const std::size_t dim = seg.front()->feature.size();
        double mean_var = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            double mean = 0.0;
            for (const Frame* f : seg) mean += f->feature[k];
            mean /= static_cast<double>(seg.size());
            double var = 0.0;
            for (const Frame* f : seg) var += (f->feature[k] - mean) * (f->feature[k] - mean);
            mean_var += var / static_cast<double>(seg.size() - 1);
        }
        total += mean_var / static_cast<double>(dim);
        ++used;
    }
    if (used == 0) {
        throw std::invalid_argument("temporal_variance: class " + std::to_string(class_id) +
                                    " has no segment with at least two frames");
    }
    return total / used;
}

std::vector<std::pair<std::int64_t, double>> per_class_temporal_variance(const SyntheticStream& stream) {
    std::set<std::int64_t> classes;
    for (const Frame& f : stream.frames) classes.insert(f.step_id);
    std::vector<std::pair<std::int64_t, double>> out;
    for (const std::int64_t c : classes) {
        try {
            out.emplace_back(c, temporal_variance(stream, c));
        } catch (const std::invalid_argument&) {
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

namespace {

constexpr const char* kCsvHeader =
    "frame,t_s,strategy,live_tokens,append_flops,recompute_flops,mem_bytes_proxy,pred,correct,verbalized";

}  // namespace

void write_trace_csv(std::ostream& out, const StrategyTrace& trace, bool header) {
    if (header) out << kCsvHeader << '\n';
    std::ostringstream line;
    line << std::fixed << std::setprecision(4);
    for (const auto& r : trace.rows) {
        line.str({});
        line << r.frame << ',' << r.t_s << ',' << r.strategy << ',' << r.live_tokens << ',' << r.append_flops << ','
             << r.recompute_flops << ',' << r.mem_bytes_proxy << ',' << r.pred << ',' << (r.correct ? 1 : 0) << ','
             << (r.verbalized ? 1 : 0) << '\n';
        out << line.str();
    }
}

std::vector<TraceRow> read_trace_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("trace CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader) throw std::invalid_argument("trace CSV has an unexpected header");

    std::vector<TraceRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 10) {
            throw std::invalid_argument("trace CSV line " + std::to_string(lineno) + " has " +
                                        std::to_string(cells.size()) + " columns");
        }
        try {
            TraceRow r;
            r.frame = std::stoll(cells[0]);
            r.t_s = std::stod(cells[1]);
            r.strategy = cells[2];
            r.live_tokens = std::stoll(cells[3]);
            r.append_flops = std::stoull(cells[4]);
            r.recompute_flops = std::stoull(cells[5]);
            r.mem_bytes_proxy = std::stoull(cells[6]);
            r.pred = std::stoll(cells[7]);
            r.correct = cells[8] == "1";
            r.verbalized = cells[9] == "1";
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw std::invalid_argument("trace CSV line " + std::to_string(lineno) + " is malformed");
        }
    }
    if (rows.empty()) throw std::invalid_argument("trace CSV has no rows");
    return rows;
}

nlohmann::json summarize(std::span<const StrategyTrace> traces, const SimConfig& cfg, double duration_s) {
    nlohmann::json out;
    out["config"] = to_json(cfg);
    out["duration_s"] = duration_s;
    out["budget"] = to_json(budget_report(cfg, duration_s));
    nlohmann::json strategies = nlohmann::json::object();
    for (const auto& t : traces) {
        nlohmann::json s;
        s["frames"] = t.rows.size();
        s["truncated"] = t.truncated;
        s["truncation_frame"] = t.truncation_frame ? nlohmann::json(*t.truncation_frame) : nlohmann::json(nullptr);
        s["accuracy"] = accuracy(t);
        if (!t.rows.empty()) {
            s["spike_ratio"] = spike_ratio(t);
            std::uint64_t total = 0;
            std::int64_t peak_live = 0;
            std::int64_t verbalizations = 0;
            for (const auto& r : t.rows) {
                total += r.frame_flops();
                peak_live = std::max(peak_live, r.live_tokens);
                verbalizations += r.verbalized ? 1 : 0;
            }
            s["total_flops"] = total;
            s["peak_live_tokens"] = peak_live;
            s["final_live_tokens"] = t.rows.back().live_tokens;
            s["verbalizations"] = verbalizations;
        }
        if (t.rows.size() >= 100) {
            const GrowthFit g = fit_growth(t);
            s["growth"] = {{"class", to_string(g.cls)}, {"exponent", g.exponent}, {"r2", g.r2}};
        } else {
            s["growth"] = nullptr;
        }
        strategies[std::string(to_string(t.kind))] = s;
    }
    out["strategies"] = strategies;
    return out;
}

}  // namespace procache
