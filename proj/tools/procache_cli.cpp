#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "procache/attention_engine.hpp"
#include "procache/core_types.hpp"
#include "procache/detr_qformer.hpp"
#include "procache/stream_harness.hpp"
#include "procache/verbalizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace procache;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kRuntime = 3;
constexpr int kVerification = 4;

// Input problems: bad flags, bad config, unreadable files.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

SimConfig config_or_default(const std::string& path) { return path.empty() ? SimConfig{} : load_config(path); }

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write " + path.string());
    return out;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string config;
    std::string strategy = "all";
    double duration_s = 1200.0;
    std::string out_dir = "procache_out";
};

int cmd_simulate(const SimulateArgs& a) {
    const std::string started = utc_now();
    const SimConfig cfg = config_or_default(a.config);
    std::vector<StrategyKind> kinds;
    if (a.strategy == "all") {
        kinds = {StrategyKind::ProgressiveVisual, StrategyKind::VerbalizedSeparate, StrategyKind::Interleaved};
    } else {
        kinds = {strategy_from_string(a.strategy)};
    }
    if (!(a.duration_s > 0.0)) throw UsageError("--duration-s must be > 0");

    const SyntheticStream stream = generate_stream(cfg, a.duration_s);
    RunOptions opts;
    opts.log_events = true;
    const auto traces = run_strategies(kinds, stream, cfg, opts);

    const fs::path dir(a.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw UsageError("cannot create " + dir.string() + ": " + ec.message());

    json artifacts = json::object();
    json truncations = json::object();
    bool truncated = false;
    for (const auto& t : traces) {
        const std::string name(to_string(t.kind));
        const fs::path csv = dir / ("trace_" + name + ".csv");
        auto out = open_out(csv);
        write_trace_csv(out, t);
        artifacts["trace_" + name] = csv.string();
        if (t.kind == StrategyKind::Interleaved) {
            const fs::path jsonl = dir / "events_b.jsonl";
            auto ev = open_out(jsonl);
            for (const auto& e : t.events) ev << to_json(e).dump() << '\n';
            artifacts["events_b"] = jsonl.string();
        }
        if (t.truncated) {
            truncated = true;
            truncations[name] = *t.truncation_frame;
        }
    }

    const fs::path summary_path = dir / "summary.json";
    open_out(summary_path) << summarize(traces, cfg, a.duration_s).dump(2) << '\n';
    artifacts["summary"] = summary_path.string();

    const json manifest{{"tool", "procache"},
                        {"version", PROCACHE_VERSION},
                        {"command", "simulate"},
                        {"config", to_json(cfg)},
                        {"seed", cfg.seed},
                        {"duration_s", a.duration_s},
                        {"strategies", a.strategy},
                        {"artifacts", artifacts},
                        {"truncated", truncations},
                        {"started_at", started},
                        {"finished_at", utc_now()}};
    const fs::path manifest_path = dir / "manifest.json";
    open_out(manifest_path) << manifest.dump(2) << '\n';

    std::cout << json{{"out_dir", dir.string()}, {"artifacts", artifacts}, {"truncated", truncations}}.dump(2) << '\n';
    if (truncated) {
        for (const auto& [name, frame] : truncations.items())
            std::cerr << "procache: strategy " << name << " exceeded memory_cap_tokens at frame " << frame << '\n';
        return kRuntime;
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string config;
    std::string sweep = "8:512:8";
    std::string out;
};

std::vector<std::int64_t> parse_sweep(const std::string& spec) {
    std::int64_t from = 0, to = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(spec);
    if (!(in >> from >> c1 >> to >> c2 >> step) || c1 != ':' || c2 != ':' || !in.eof()) {
        throw UsageError("--sweep expects from:to:step, got '" + spec + "'");
    }
    if (from < 1 || step < 1) throw UsageError("--sweep needs from >= 1 and step >= 1");
    if (to < from) throw UsageError("--sweep range is reversed (" + spec + ")");
    std::vector<std::int64_t> points;
    for (std::int64_t n = from; n <= to; n += step) points.push_back(n);
    return points;
}

int cmd_bench(const BenchArgs& a) {
    const SimConfig cfg = config_or_default(a.config);
    const auto points = parse_sweep(a.sweep);

    AttentionEngine engine(cfg.d, cfg.heads, cfg.layers, cfg.vocab_size, cfg.seed);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> live, flops;
    TokenId next = 0;
    for (const std::int64_t target : points) {
        std::uint64_t delta = 0;
        while (static_cast<std::int64_t>(engine.size()) < target) {
            Token t;
            t.id = next;
            t.kind = TokenKind::VisualFrame;
            t.frame_index = static_cast<std::int64_t>(next);
            t.entry_position = static_cast<Position>(next);
            t.embedding.resize(static_cast<std::size_t>(cfg.d));
            for (auto& x : t.embedding) x = normal(rng);
            ++next;
            const auto before = engine.flops_snapshot();
            engine.append_token(t);
            delta = engine.flops_snapshot() - before;
        }
        live.push_back(static_cast<double>(target));
        flops.push_back(static_cast<double>(delta));
    }

    if (!a.out.empty()) {
        auto out = open_out(a.out);
        out << "live_tokens,append_flops\n";
        for (std::size_t i = 0; i < live.size(); ++i)
            out << static_cast<std::int64_t>(live[i]) << ',' << static_cast<std::uint64_t>(flops[i]) << '\n';
    }
    json report{{"points", live.size()}, {"live_tokens", live}, {"append_flops", flops}};
    if (live.size() >= 2) {
        const auto fit = fit_affine(live, flops);
        report["fit"] = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}};
    } else {
        report["fit"] = nullptr;
        report["note"] = "an affine fit needs at least two sweep points";
    }
    if (!a.out.empty()) report["csv"] = a.out;
    std::cout << report.dump(2) << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
    bool synthetic = false;
    std::string scene;
    double eps = 1e-4;
    double lambda_1 = 2.0;
    std::uint64_t seed = 1;
    double tolerance = 1e-4;
};

Scene load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read scene file " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("scene file " + path + " is not valid JSON: " + e.what());
    }
    return scene_from_json(doc);
}

ConnectorDims dims_for(const Scene& scene) {
    ConnectorDims dims;
    dims.patch_dim = scene.grid.dim();
    dims.query_dim = scene.grid.dim();
    for (auto id : scene.caption) dims.vocab_size = std::max(dims.vocab_size, id + 1);
    return dims;
}

Scene mini_scene(std::uint64_t seed) {
    SyntheticSceneSpec spec;
    spec.side = 4;
    spec.patch_dim = 8;
    spec.objects = 1;
    spec.caption_length = 3;
    spec.vocab_size = 16;
    return make_synthetic_scene(spec, seed);
}

int cmd_gradcheck(const GradcheckArgs& a) {
    if (!(a.eps > 0.0)) throw UsageError("--eps must be > 0");
    if (a.synthetic == !a.scene.empty()) throw UsageError("pass exactly one of --synthetic or --scene");
    const Scene scene = a.synthetic ? mini_scene(a.seed) : load_scene(a.scene);
    ConnectorDims dims = dims_for(scene);
    if (a.synthetic) {
        dims.token_dim = 4;
        dims.visual_queries = 3;
        dims.box_hidden = 6;
        dims.vocab_size = 16;
    }
    const Connector connector = make_connector(dims, a.seed);
    const auto r = check_connector_gradient(connector, scene, a.lambda_1, a.eps);
    const bool pass = r.max_rel_error <= a.tolerance;
    std::cout << json{{"max_rel_error", r.max_rel_error},
                      {"worst_index", r.worst_index},
                      {"analytic", r.analytic},
                      {"numeric", r.numeric},
                      {"checked", r.checked},
                      {"eps", a.eps},
                      {"tolerance", a.tolerance},
                      {"pass", pass}}
                     .dump(2)
              << '\n';
    return pass ? kOk : kVerification;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string scene;
    int epochs = 200;
    double lr = 0.05;
    double lambda_1 = 2.0;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_train(const TrainArgs& a) {
    const Scene scene = a.scene.empty() ? make_synthetic_scene(SyntheticSceneSpec{}, a.seed) : load_scene(a.scene);
    Connector connector = make_connector(dims_for(scene), a.seed);
    const std::vector<Scene> scenes{scene};
    const auto curve = train_toy(connector, scenes, a.epochs, a.lr, a.lambda_1);
    if (!a.out.empty()) {
        auto out = open_out(a.out);
        out << "epoch,total,lm,ho\n";
        for (std::size_t e = 0; e < curve.total.size(); ++e)
            out << e << ',' << curve.total[e] << ',' << curve.lm[e] << ',' << curve.ho[e] << '\n';
    }
    std::cout << json{{"epochs", a.epochs},
                      {"lr", a.lr},
                      {"initial", {{"total", curve.total.front()}, {"lm", curve.lm.front()}, {"ho", curve.ho.front()}}},
                      {"final", {{"total", curve.total.back()}, {"lm", curve.lm.back()}, {"ho", curve.ho.back()}}},
                      {"ho_ratio", curve.ho.back() / curve.ho.front()}}
                     .dump(2)
              << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
    bool budget = false;
    std::string scaling;
    std::string config;
    double horizon_s = 3600.0;
};

int cmd_report(const ReportArgs& a) {
    if (a.budget == !a.scaling.empty()) throw UsageError("pass exactly one of --budget or --scaling");
    if (a.budget) {
        std::cout << to_json(budget_report(config_or_default(a.config), a.horizon_s)).dump(2) << '\n';
        return kOk;
    }
    std::ifstream in(a.scaling);
    if (!in) throw UsageError("cannot read trace " + a.scaling);
    const auto rows = read_trace_csv(in);
    std::vector<double> live;
    for (const auto& r : rows) live.push_back(static_cast<double>(r.live_tokens));
    const auto g = fit_growth(live);
    std::cout << json{{"trace", a.scaling},
                      {"strategy", rows.front().strategy},
                      {"frames", rows.size()},
                      {"class", std::string(to_string(g.cls))},
                      {"exponent", g.exponent},
                      {"r2", g.r2}}
                     .dump(2)
              << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming interleaved token-cache simulator and verification tools"};
    app.set_version_flag("--version", PROCACHE_VERSION);
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Run caching strategies over a synthetic stream");
    simulate->add_option("--config", sim.config, "SimConfig JSON file");
    simulate->add_option("--strategy", sim.strategy, "all, a1, a2 or b")->check(CLI::IsMember({"all", "a1", "a2", "b"}));
    simulate->add_option("--duration-s", sim.duration_s, "Stream length in seconds");
    simulate->add_option("--out-dir", sim.out_dir, "Output directory");

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "Per-append FLOPs against live-token count");
    bench->add_option("--config", bench_args.config, "SimConfig JSON file");
    bench->add_option("--sweep", bench_args.sweep, "from:to:step live-token counts");
    bench->add_option("--out", bench_args.out, "CSV output path");

    GradcheckArgs gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the connector gradient");
    gradcheck->add_flag("--synthetic", gc.synthetic, "Use a generated 4x4 mini-grid scene");
    gradcheck->add_option("--scene", gc.scene, "Scene JSON file");
    gradcheck->add_option("--eps", gc.eps, "Central-difference step");
    gradcheck->add_option("--lambda", gc.lambda_1, "Weight of the box loss");
    gradcheck->add_option("--seed", gc.seed, "Connector and scene seed");
    gradcheck->add_option("--tolerance", gc.tolerance, "Maximum relative error");

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Overfit the connector on one scene");
    train->add_option("--scene", tr.scene, "Scene JSON file (default: synthetic)");
    train->add_option("--epochs", tr.epochs, "Gradient steps")->check(CLI::NonNegativeNumber);
    train->add_option("--lr", tr.lr, "Initial step size")->check(CLI::NonNegativeNumber);
    train->add_option("--lambda", tr.lambda_1, "Weight of the box loss")->check(CLI::NonNegativeNumber);
    train->add_option("--seed", tr.seed, "Connector and scene seed");
    train->add_option("--out", tr.out, "Loss-curve CSV path");

    ReportArgs rep;
    auto* report = app.add_subcommand("report", "Token budget or growth classification");
    report->add_flag("--budget", rep.budget, "Print the token budget report");
    report->add_option("--scaling", rep.scaling, "Classify live-token growth of a trace CSV");
    report->add_option("--config", rep.config, "SimConfig JSON file");
    report->add_option("--horizon-s", rep.horizon_s, "Budget horizon in seconds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*simulate) return cmd_simulate(sim);
        if (*bench) return cmd_bench(bench_args);
        if (*gradcheck) return cmd_gradcheck(gc);
        if (*train) return cmd_train(tr);
        if (*report) return cmd_report(rep);
    } catch (const ConfigError& e) {
        std::cerr << "procache: config error in field '" << e.field() << "': " << e.what() << '\n';
        return kUsage;
    } catch (const UsageError& e) {
        std::cerr << "procache: " << e.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "procache: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "procache: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}
