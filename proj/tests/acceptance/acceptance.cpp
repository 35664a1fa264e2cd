// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "procache/attention_engine.hpp"
#include "procache/detr_qformer.hpp"
#include "procache/stream_harness.hpp"
#include "procache/verbalizer.hpp"
#include "../support/alg2_reference.hpp"
#include "../support/cache_traces.hpp"
#include "../support/token_factory.hpp"

using namespace procache;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int failures = 0;

void run(int id, const char* name, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("[%s] %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), s);
    std::fflush(stdout);
}

Outcome attention_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::size_t appends = 0;
    for (std::uint64_t trace = 0; trace < 1000; ++trace) {
        std::mt19937_64 rng(trace);
        const int heads = std::uniform_int_distribution<int>(1, 2)(rng);
        const int d = 4 * heads;
        const int layers = std::uniform_int_distribution<int>(1, 3)(rng);
        const auto w = make_attention_weights(d, heads, layers, 16, trace + 7);
        AttentionEngine engine(w);
        const int length = std::uniform_int_distribution<int>(1, 256)(rng);
        std::vector<Token> live;
        Position pos = 0;
        for (int i = 0; i < length; ++i) {
            if (live.size() > 1 && std::uniform_int_distribution<int>(0, 2)(rng) == 0) {
                // Mid-sequence eviction of one to three tokens.
                const int k = std::uniform_int_distribution<int>(1, 3)(rng);
                for (int e = 0; e < k && live.size() > 1; ++e) {
                    const auto at = std::uniform_int_distribution<std::size_t>(0, live.size() - 2)(rng);
                    engine.evict(live[at].id);
                    live.erase(live.begin() + static_cast<std::ptrdiff_t>(at));
                }
            }
            pos += std::uniform_int_distribution<Position>(1, 40)(rng);
            Token t = testing::visual(static_cast<TokenId>(i), i, testing::random_embedding(rng, d));
            t.entry_position = pos;
            live.push_back(t);
            const auto inc = engine.append_token(t);
            const auto ref = full_recompute(w, live);
            worst = std::max(worst, (inc.output - ref.back()).cwiseAbs().maxCoeff());
            ++appends;
        }
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {worst <= 1e-6 && s < 60.0,
            fmt("max abs error %.3g over %zu appends in 1000 traces, %.1f s (limits 1e-6, 60 s)", worst, appends, s)};
}

Outcome linear_compute() {
    const SimConfig cfg;
    AttentionEngine engine(cfg.d, cfg.heads, cfg.layers, cfg.vocab_size, cfg.seed);
    std::mt19937_64 rng(2);
    std::vector<double> n, cost;
    for (TokenId i = 0; engine.size() < 512; ++i) {
        Token t = testing::visual(i, static_cast<std::int64_t>(i), testing::random_embedding(rng, cfg.d));
        t.entry_position = static_cast<Position>(i);
        const auto before = engine.flops_snapshot();
        engine.append_token(t);
        if (engine.size() >= 8) {
            n.push_back(static_cast<double>(engine.size()));
            cost.push_back(static_cast<double>(engine.flops_snapshot() - before));
        }
        // Occasional evictions so live counts are revisited out of order.
        if (i % 7 == 6 && engine.size() > 16) {
            const auto ids = engine.ids();
            engine.evict(ids[std::uniform_int_distribution<std::size_t>(0, ids.size() - 2)(rng)]);
        }
    }
    const auto fit = fit_affine(n, cost);
    return {fit.r2 >= 0.999, fmt("R^2 %.6f over %zu appends with N in [8, 512], slope %.1f per token (limit 0.999)",
                                 fit.r2, n.size(), fit.slope)};
}

Outcome token_budget() {
    SimConfig cfg;
    cfg.fps = 4;
    cfg.tokens_per_frame = 1;
    cfg.mean_step_s = 32;
    cfg.tokens_per_step = 5.7;
    const auto hour = budget_report(cfg, 3600);
    const auto short_run = budget_report(cfg, 128);
    const bool ok = std::abs(hour.verbalized_text_tokens - 641.0) <= 64.1 && hour.reduction_ratio >= 20.0 &&
                    hour.reduction_ratio <= 25.0 && std::abs(short_run.verbalized_text_tokens - 22.8) <= 0.15 * 22.8;
    return {ok, fmt("1 h: %.0f visual, %.2f text, ratio %.2f; 128 s: %.2f text", hour.visual_tokens,
                    hour.verbalized_text_tokens, hour.reduction_ratio, short_run.verbalized_text_tokens)};
}

struct StreamRuns {
    SimConfig cfg;
    SyntheticStream stream;
};

const StreamRuns& half_hour() {
    static const StreamRuns runs = [] {
        StreamRuns r;
        r.cfg.predictor_noise = 0.0;
        r.stream = generate_stream(r.cfg, 1800);
        return r;
    }();
    return runs;
}

Outcome growth_classes() {
    const auto& [cfg, stream] = half_hour();
    SimConfig unbounded = cfg;
    unbounded.N_L = std::nullopt;
    SimConfig bounded = cfg;
    bounded.N_L = 5;
    const auto a1 = fit_growth(run_strategy(StrategyKind::ProgressiveVisual, stream, cfg));
    const auto b_inf = fit_growth(run_strategy(StrategyKind::Interleaved, stream, unbounded));
    const auto b_5 = fit_growth(run_strategy(StrategyKind::Interleaved, stream, bounded));
    const bool ok = a1.cls == GrowthClass::Linear && std::abs(a1.exponent - 1.0) <= 0.05 &&
                    b_inf.cls == GrowthClass::Sublinear && b_inf.exponent <= 0.8 && b_5.cls == GrowthClass::Bounded;
    return {ok, fmt("%zu frames; a1 %s (exp %.3f), b N_L=inf %s (exp %.3f), b N_L=5 %s (exp %.3f)",
                    stream.frames.size(), std::string(to_string(a1.cls)).c_str(), a1.exponent,
                    std::string(to_string(b_inf.cls)).c_str(), b_inf.exponent, std::string(to_string(b_5.cls)).c_str(),
                    b_5.exponent)};
}

Outcome spike_elimination() {
    const auto& [cfg, stream] = half_hour();
    SimConfig c = cfg;
    c.N_L = 5;
    const std::vector<StrategyKind> kinds{StrategyKind::VerbalizedSeparate, StrategyKind::Interleaved};
    const auto traces = run_strategies(kinds, stream, c);
    const double a2 = spike_ratio(traces[0]);
    const double b = spike_ratio(traces[1]);
    return {a2 >= 5.0 && b <= 1.5, fmt("max/median per-frame FLOPs: a2 %.2f (>= 5), b %.3f (<= 1.5)", a2, b)};
}

Outcome cache_laws() {
    std::size_t ops = 0;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
        const auto r = testing::check_random_cache_trace(seed);
        ops += r.ops;
        if (!r.ok) return {false, r.failure};
    }
    return {true, fmt("10000 traces, %zu ops, all match the list-scan reference", ops)};
}

BBox random_box(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> size(0.01, 0.8), unit(0.0, 1.0);
    return BBox{unit(rng), unit(rng), size(rng), size(rng)};
}

Outcome matching_oracle() {
    std::mt19937_64 rng(7);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n_pred = std::uniform_int_distribution<int>(1, 4)(rng);
        const int n_gt = std::uniform_int_distribution<int>(1, n_pred)(rng);
        std::vector<BBox> pred, gt;
        for (int i = 0; i < n_pred; ++i) pred.push_back(random_box(rng));
        for (int i = 0; i < n_gt; ++i) gt.push_back(random_box(rng));
        // Duplicated boxes exercise the tie rule.
        if (trial % 10 == 0 && n_pred > 1) pred[1] = pred[0];
        const auto sigma = hungarian_match(pred, gt);

        std::vector<int> perm(static_cast<std::size_t>(n_pred));
        std::iota(perm.begin(), perm.end(), 0);
        double best = std::numeric_limits<double>::infinity();
        std::vector<int> arg;
        do {
            double c = 0.0;
            for (int i = 0; i < n_gt; ++i) c += match_cost(gt[static_cast<std::size_t>(i)], pred[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
            if (c < best - 1e-12) {
                best = c;
                arg.assign(perm.begin(), perm.begin() + n_gt);
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        mismatches += sigma != arg;
    }

    int giou_violations = 0;
    for (int i = 0; i < 100000; ++i) {
        const BBox a = random_box(rng), b = random_box(rng);
        const double g = giou(a, b);
        if (std::abs(g - giou(b, a)) > 1e-12 || !(g > -1.0 && g <= 1.0) || std::abs(giou(a, a) - 1.0) > 1e-12)
            ++giou_violations;
    }
    return {mismatches == 0 && giou_violations == 0,
            fmt("%d/1000 assignment mismatches vs exhaustive search, %d/100000 GIoU property violations", mismatches,
                giou_violations)};
}

Outcome gradient_correctness() {
    ConnectorDims mini;
    mini.patch_dim = 8;
    mini.query_dim = 8;
    mini.token_dim = 4;
    mini.visual_queries = 3;
    mini.object_queries = 2;
    mini.box_hidden = 6;
    mini.vocab_size = 16;
    SyntheticSceneSpec mini_spec;
    mini_spec.side = 4;
    mini_spec.patch_dim = 8;
    mini_spec.objects = 1;
    mini_spec.caption_length = 3;
    mini_spec.vocab_size = 16;
    double worst_mini = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto r = check_connector_gradient(make_connector(mini, seed), make_synthetic_scene(mini_spec, seed), 2.0, 1e-4);
        worst_mini = std::max(worst_mini, r.max_rel_error);
    }
    const auto full = check_connector_gradient(make_connector(ConnectorDims{}, 11),
                                               make_synthetic_scene(SyntheticSceneSpec{}, 11), 2.0, 1e-4);

    auto connector = make_connector(ConnectorDims{}, 5);
    const std::vector<Scene> scenes{make_synthetic_scene(SyntheticSceneSpec{}, 5)};
    const auto curve = train_toy(connector, scenes, 200, 0.05, 2.0);
    const double ratio = curve.ho.back() / curve.ho.front();
    const bool ok = worst_mini <= 1e-4 && full.max_rel_error <= 1e-4 && ratio <= 0.1;
    return {ok, fmt("grad_check max rel error %.3g (4x4, 10 seeds), %.3g (16x16, %zu params); L_HO %.4f -> %.4f "
                    "(%.2f%%) after 200 epochs",
                    worst_mini, full.max_rel_error, full.checked, curve.ho.front(), curve.ho.back(), 100.0 * ratio)};
}

Outcome alg2_fidelity() {
    std::size_t events = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        std::mt19937_64 rng(s);
        auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
        SimConfig cfg;
        cfg.seed = s;
        cfg.d = 8;
        cfg.heads = 2;
        cfg.layers = 1;
        cfg.vocab_size = 32;
        cfg.N_S = pick(1, 32);
        cfg.N_L = pick(0, 3) == 0 ? std::nullopt : std::optional<int>(pick(0, 6));
        cfg.tau = pick(0, 12);
        cfg.tokens_per_frame = pick(1, 3);
        cfg.num_classes = pick(2, 10);
        cfg.mean_step_s = pick(2, 20);
        cfg.step_s_jitter = pick(0, 4);
        cfg.predictor_noise = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
        cfg.prompt_tokens = pick(0, 4);
        const auto stream = generate_stream(cfg, pick(20, 200));
        const auto r = testing::check_alg2_replay(stream, cfg);
        events += r.events;
        if (!r.ok) return {false, fmt("stream %llu: %s", static_cast<unsigned long long>(s), r.failure.c_str())};
    }
    return {true, fmt("100 random streams, %zu cache ops identical to the pseudocode transcription", events)};
}

}  // namespace

int main() {
    run(1, "incremental attention equals full recompute", attention_equivalence);
    run(2, "per-append compute is affine in cache size", linear_compute);
    run(3, "token budget", token_budget);
    run(4, "growth classes on a 30-minute stream", growth_classes);
    run(5, "spike elimination", spike_elimination);
    run(6, "cache-law property suite", cache_laws);
    run(7, "matching oracle and GIoU properties", matching_oracle);
    run(8, "gradient correctness and single-scene overfit", gradient_correctness);
    run(9, "streaming-inference op log fidelity", alg2_fidelity);
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
