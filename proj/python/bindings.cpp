#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "procache/attention_engine.hpp"
#include "procache/core_types.hpp"
#include "procache/detr_qformer.hpp"
#include "procache/interleaved_cache.hpp"
#include "procache/stream_harness.hpp"
#include "procache/verbalizer.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace procache;

namespace {

// JSON crosses the boundary as text; the config and report types are plain data.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& obj) {
    return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

SimConfig config_arg(const py::object& obj) { return obj.is_none() ? SimConfig{} : config_from_json(from_py(obj)); }

BBox box_arg(const std::array<double, 4>& b) { return BBox{b[0], b[1], b[2], b[3]}; }

std::vector<BBox> boxes_arg(const std::vector<std::array<double, 4>>& boxes) {
    std::vector<BBox> out;
    for (const auto& b : boxes) out.push_back(box_arg(b));
    return out;
}

py::dict trace_dict(const StrategyTrace& t) {
    std::vector<std::int64_t> frame, live, pred;
    std::vector<double> t_s;
    std::vector<std::uint64_t> append, recompute, mem;
    std::vector<bool> correct, verbalized;
    for (const auto& r : t.rows) {
        frame.push_back(r.frame);
        t_s.push_back(r.t_s);
        live.push_back(r.live_tokens);
        append.push_back(r.append_flops);
        recompute.push_back(r.recompute_flops);
        mem.push_back(r.mem_bytes_proxy);
        pred.push_back(r.pred);
        correct.push_back(r.correct);
        verbalized.push_back(r.verbalized);
    }
    py::dict d;
    d["strategy"] = std::string(to_string(t.kind));
    d["frame"] = frame;
    d["t_s"] = t_s;
    d["live_tokens"] = live;
    d["append_flops"] = append;
    d["recompute_flops"] = recompute;
    d["mem_bytes_proxy"] = mem;
    d["pred"] = pred;
    d["correct"] = correct;
    d["verbalized"] = verbalized;
    d["truncated"] = t.truncated;
    d["truncation_frame"] = t.truncation_frame;
    d["spike_ratio"] = spike_ratio(t);
    d["accuracy"] = accuracy(t);
    py::list events;
    for (const auto& e : t.events) events.append(to_py(to_json(e)));
    d["events"] = events;
    return d;
}

py::dict growth_dict(const GrowthFit& g) {
    py::dict d;
    d["class"] = std::string(to_string(g.cls));
    d["exponent"] = g.exponent;
    d["r2"] = g.r2;
    return d;
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

ConnectorDims mini_dims() {
    ConnectorDims dims;
    dims.patch_dim = 8;
    dims.query_dim = 8;
    dims.token_dim = 4;
    dims.visual_queries = 3;
    dims.box_hidden = 6;
    dims.vocab_size = 16;
    return dims;
}

}  // namespace

PYBIND11_MODULE(_procache, m) {
    m.doc() = "Interleaved token cache, incremental attention and connector losses";

    py::register_exception<StructuralError>(m, "StructuralError");
    py::register_exception<DivergenceError>(m, "DivergenceError");

    // Config

    m.def("default_config", [] { return to_py(to_json(SimConfig{})); });
    m.def("validate_config", [](const py::object& cfg) { return to_py(to_json(validate_config(config_arg(cfg)))); },
          py::arg("config"), "Fills defaults and range-checks; raises ValueError naming the bad field.");

    // Tokens and the cache

    py::enum_<TokenKind>(m, "TokenKind")
        .value("VisualFrame", TokenKind::VisualFrame)
        .value("Text", TokenKind::Text)
        .value("LongTermMarker", TokenKind::LongTermMarker)
        .value("Prompt", TokenKind::Prompt);

    py::class_<Token>(m, "Token")
        .def(py::init([](TokenId id, TokenKind kind, std::vector<double> embedding, std::optional<std::int64_t> frame_index,
                         std::optional<std::int64_t> step_id, std::optional<std::int32_t> vocab_id) {
                 Token t;
                 t.id = id;
                 t.kind = kind;
                 t.embedding = std::move(embedding);
                 t.frame_index = frame_index;
                 t.step_id = step_id;
                 t.vocab_id = vocab_id;
                 validate_token(t);
                 return t;
             }),
             py::arg("id"), py::arg("kind"), py::arg("embedding") = std::vector<double>{},
             py::arg("frame_index") = py::none(), py::arg("step_id") = py::none(), py::arg("vocab_id") = py::none())
        .def_readonly("id", &Token::id)
        .def_readonly("kind", &Token::kind)
        .def_readwrite("embedding", &Token::embedding)
        .def_readonly("frame_index", &Token::frame_index)
        .def_readonly("step_id", &Token::step_id)
        .def_readonly("vocab_id", &Token::vocab_id)
        .def_readwrite("entry_position", &Token::entry_position)
        .def("__repr__", [](const Token& t) {
            return "Token(id=" + std::to_string(t.id) + ", kind=" + std::string(to_string(t.kind)) + ")";
        });

    py::class_<InterleavedCache>(m, "InterleavedCache")
        .def(py::init<std::size_t, std::optional<std::size_t>>(), py::arg("visual_capacity"), py::arg("long_capacity"))
        .def("entry", &InterleavedCache::entry, py::arg("token"), py::return_value_policy::copy)
        .def("exit_short", &InterleavedCache::exit_short)
        .def("exit_long", &InterleavedCache::exit_long)
        .def("live_tokens", &InterleavedCache::live_tokens)
        .def("live_ids", &InterleavedCache::live_ids)
        .def("__len__", &InterleavedCache::size)
        .def_property_readonly("visual_count", &InterleavedCache::visual_count)
        .def_property_readonly("long_count", &InterleavedCache::long_count)
        .def_property_readonly("text_count", &InterleavedCache::text_count)
        .def("enable_event_log", &InterleavedCache::enable_event_log, py::arg("on") = true)
        .def("set_time", &InterleavedCache::set_time, py::arg("t_s"))
        .def("events", [](const InterleavedCache& c) {
            py::list out;
            for (const auto& e : c.events()) out.append(to_py(to_json(e)));
            return out;
        });

    // Attention

    py::class_<AttentionWeights>(m, "AttentionWeights")
        .def_readonly("d", &AttentionWeights::d)
        .def_readonly("heads", &AttentionWeights::heads)
        .def_readonly("layers", &AttentionWeights::layers)
        .def_readonly("head_slopes", &AttentionWeights::head_slopes);
    m.def("make_attention_weights", &make_attention_weights, py::arg("d"), py::arg("heads"), py::arg("layers"),
          py::arg("vocab_size"), py::arg("seed"));

    py::class_<AttentionEngine>(m, "AttentionEngine")
        .def(py::init<AttentionWeights>(), py::arg("weights"))
        .def(py::init<int, int, int, int, std::uint64_t>(), py::arg("d"), py::arg("heads"), py::arg("layers"),
             py::arg("vocab_size"), py::arg("seed"))
        .def("append_token",
             [](AttentionEngine& e, const Token& t) {
                 auto r = e.append_token(t);
                 return py::make_tuple(r.output, r.logits);
             },
             py::arg("token"), "Returns (output, logits) for the appended token.")
        .def("evict", [](AttentionEngine& e, const std::vector<TokenId>& ids) { e.evict(ids); }, py::arg("ids"))
        .def_property_readonly("flops", &AttentionEngine::flops_snapshot)
        .def("__len__", &AttentionEngine::size)
        .def("ids", &AttentionEngine::ids)
        .def("positions", &AttentionEngine::positions)
        .def("last_attention", &AttentionEngine::last_attention);
    m.def("full_recompute", [](const AttentionWeights& w, const std::vector<Token>& tokens) { return full_recompute(w, tokens); },
          py::arg("weights"), py::arg("tokens"));

    // Verbalization and budgets

    m.def("should_verbalize",
          [](const std::vector<std::int64_t>& history, std::size_t tau, std::int64_t step_id) {
              PredictionLog log(tau);
              for (std::size_t i = 0; i < history.size(); ++i) log.push(static_cast<std::int64_t>(i), history[i]);
              return should_verbalize(log, step_id);
          },
          py::arg("history"), py::arg("tau"), py::arg("step_id"));
    m.def("group_consecutive",
          [](const std::vector<std::pair<std::int64_t, std::int64_t>>& preds, double fps) {
              std::vector<Prediction> p;
              for (const auto& [frame, step] : preds) p.push_back({frame, step});
              py::list out;
              for (const auto& r : group_consecutive(p, fps)) {
                  py::dict d;
                  d["step_id"] = r.step_id;
                  d["start_s"] = r.start_s;
                  d["end_s"] = r.end_s;
                  out.append(d);
              }
              return out;
          },
          py::arg("predictions"), py::arg("fps"));
    m.def("budget_report",
          [](const py::object& cfg, double horizon_s) { return to_py(to_json(budget_report(config_arg(cfg), horizon_s))); },
          py::arg("config") = py::none(), py::arg("horizon_s") = 3600.0);

    // Streams and strategies

    m.def("run_strategy",
          [](const py::object& cfg_obj, const std::string& strategy, double duration_s, bool log_events) {
              const SimConfig cfg = config_arg(cfg_obj);
              const auto stream = generate_stream(cfg, duration_s);
              RunOptions opts;
              opts.log_events = log_events;
              StrategyTrace t;
              {
                  py::gil_scoped_release release;
                  t = run_strategy(strategy_from_string(strategy), stream, cfg, opts);
              }
              return trace_dict(t);
          },
          py::arg("config") = py::none(), py::arg("strategy") = "b", py::arg("duration_s") = 600.0,
          py::arg("log_events") = false, "Generates the synthetic stream for `config` and replays it.");
    m.def("fit_growth", [](const std::vector<double>& live) { return growth_dict(fit_growth(live)); }, py::arg("live_tokens"));
    m.def("fit_affine",
          [](const std::vector<double>& x, const std::vector<double>& y) {
              const auto f = fit_affine(x, y);
              return py::make_tuple(f.slope, f.intercept, f.r2);
          },
          py::arg("x"), py::arg("y"), "Returns (slope, intercept, r2).");

    // Boxes and losses; boxes are (cx, cy, w, h) tuples.

    m.def("giou", [](const std::array<double, 4>& a, const std::array<double, 4>& b) { return giou(box_arg(a), box_arg(b)); },
          py::arg("a"), py::arg("b"));
    m.def("hungarian_match",
          [](const std::vector<std::array<double, 4>>& pred, const std::vector<std::array<double, 4>>& gt) {
              const auto p = boxes_arg(pred);
              const auto g = boxes_arg(gt);
              return hungarian_match(p, g);
          },
          py::arg("pred"), py::arg("gt"));
    m.def("loss_lm",
          [](const std::vector<Eigen::VectorXd>& logits, const std::vector<std::int32_t>& targets) {
              return loss_lm(logits, targets);
          },
          py::arg("logits"), py::arg("targets"));
    m.def("loss_total", &loss_total, py::arg("lm"), py::arg("ho"), py::arg("lambda_1"));
    m.def("grad_check",
          [](const std::vector<double>& params, const std::function<py::object(std::vector<double>)>& fn, double eps) {
              // fn(params) -> (loss, grad)
              LossWithGrad loss = [&](std::span<const double> p, std::span<double> g) {
                  const auto res = fn(std::vector<double>(p.begin(), p.end())).cast<std::pair<double, std::vector<double>>>();
                  if (!g.empty()) std::copy(res.second.begin(), res.second.end(), g.begin());
                  return res.first;
              };
              const auto r = grad_check(params, loss, eps);
              py::dict d;
              d["max_rel_error"] = r.max_rel_error;
              d["worst_index"] = r.worst_index;
              d["checked"] = r.checked;
              return d;
          },
          py::arg("params"), py::arg("fn"), py::arg("eps"), "fn(params) must return (loss, gradient).");

    // Connector

    m.def("connector_gradcheck",
          [](std::uint64_t seed, double eps, double lambda_1) {
              const auto r = check_connector_gradient(make_connector(mini_dims(), seed), mini_scene(seed), lambda_1, eps);
              py::dict d;
              d["max_rel_error"] = r.max_rel_error;
              d["worst_index"] = r.worst_index;
              d["checked"] = r.checked;
              return d;
          },
          py::arg("seed") = 1, py::arg("eps") = 1e-4, py::arg("lambda_1") = 2.0,
          "Gradient check of the connector loss on a synthetic 4x4 scene.");
    m.def("train_toy",
          [](std::uint64_t seed, int epochs, double lr, double lambda_1) {
              auto connector = make_connector(ConnectorDims{}, seed);
              const std::vector<Scene> scenes{make_synthetic_scene(SyntheticSceneSpec{}, seed)};
              TrainCurve curve;
              {
                  py::gil_scoped_release release;
                  curve = train_toy(connector, scenes, epochs, lr, lambda_1);
              }
              py::dict d;
              d["total"] = curve.total;
              d["lm"] = curve.lm;
              d["ho"] = curve.ho;
              return d;
          },
          py::arg("seed") = 1, py::arg("epochs") = 200, py::arg("lr") = 0.05, py::arg("lambda_1") = 2.0,
          "Overfits a fresh connector on one synthetic 16x16 scene; returns the loss curves.");
    m.def("scene_from_json", [](const py::object& doc) { return to_py(to_json(scene_from_json(from_py(doc)))); },
          py::arg("doc"), "Validates a scene document and returns it with patches base64-encoded.");
}
