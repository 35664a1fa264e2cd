#include "procache/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace procache {

std::string_view to_string(TokenKind kind) {
    switch (kind) {
        case TokenKind::VisualFrame: return "visual";
        case TokenKind::Text: return "text";
        case TokenKind::LongTermMarker: return "long_marker";
        case TokenKind::Prompt: return "prompt";
    }
    return "unknown";
}

TokenKind token_kind_from_string(std::string_view name) {
    if (name == "visual") return TokenKind::VisualFrame;
    if (name == "text") return TokenKind::Text;
    if (name == "long_marker") return TokenKind::LongTermMarker;
    if (name == "prompt") return TokenKind::Prompt;
    throw std::invalid_argument("unknown token kind '" + std::string(name) + "'");
}

void validate_token(const Token& token) {
    switch (token.kind) {
        case TokenKind::VisualFrame:
            if (!token.frame_index) {
                throw std::invalid_argument("visual token " + std::to_string(token.id) + " has no frame_index");
            }
            break;
        case TokenKind::Text:
        case TokenKind::LongTermMarker:
            if (!token.step_id) {
                throw std::invalid_argument("token " + std::to_string(token.id) + " of kind " +
                                            std::string(to_string(token.kind)) + " has no step_id");
            }
            break;
        case TokenKind::Prompt:
            break;
    }
}

void validate_step(const StepRecord& step) {
    if (!(step.end_s > step.start_s)) {
        throw std::invalid_argument("step " + std::to_string(step.step_id) + ": end_s must exceed start_s");
    }
    if (step.text_token_count < 1) {
        throw std::invalid_argument("step " + std::to_string(step.step_id) + ": text_token_count must be >= 1");
    }
}

bool is_valid(const BBox& box) noexcept {
    return std::isfinite(box.cx) && std::isfinite(box.cy) && std::isfinite(box.w) && std::isfinite(box.h) &&
           box.w > 0.0 && box.h > 0.0;
}

BBox clamp_to_unit(const BBox& box) {
    const double x1 = std::clamp(box.x1(), 0.0, 1.0);
    const double x2 = std::clamp(box.x2(), 0.0, 1.0);
    const double y1 = std::clamp(box.y1(), 0.0, 1.0);
    const double y2 = std::clamp(box.y2(), 0.0, 1.0);
    return BBox{0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

namespace {

void require(bool ok, const char* field, const std::string& message) {
    if (!ok) throw ConfigError(field, message);
}

}  // namespace

SimConfig validate_config(const SimConfig& cfg) {
    require(std::isfinite(cfg.fps) && cfg.fps > 0.0, "fps", "fps must be > 0");
    require(cfg.tokens_per_frame >= 1, "tokens_per_frame", "tokens_per_frame must be >= 1");
    require(cfg.d >= 1, "d", "d must be >= 1");
    require(cfg.N_S >= 1, "N_S", "N_S must be ≥ 1");
    require(!cfg.N_L || *cfg.N_L >= 0, "N_L", "N_L must be ≥ 0 (or null for unbounded)");
    require(cfg.tau >= 0, "tau", "tau must be ≥ 0");
    require(std::isfinite(cfg.mean_step_s) && cfg.mean_step_s > 0.0, "mean_step_s", "mean_step_s must be > 0");
    require(std::isfinite(cfg.step_s_jitter) && cfg.step_s_jitter >= 0.0, "step_s_jitter",
            "step_s_jitter must be >= 0");
    require(cfg.vocab_size >= 2, "vocab_size", "vocab_size must be >= 2");
    require(std::isfinite(cfg.lambda_1) && cfg.lambda_1 >= 0.0, "lambda_1", "lambda_1 must be >= 0");
    require(std::isfinite(cfg.tokens_per_step) && cfg.tokens_per_step >= 1.0, "tokens_per_step",
            "tokens_per_step must be >= 1");
    require(cfg.num_classes >= 2, "num_classes", "num_classes must be >= 2");
    require(cfg.heads >= 1, "heads", "heads must be >= 1");
    require(cfg.d % cfg.heads == 0, "heads", "d must be divisible by heads");
    require(cfg.layers >= 1, "layers", "layers must be >= 1");
    require(std::isfinite(cfg.feature_noise) && cfg.feature_noise >= 0.0, "feature_noise",
            "feature_noise must be >= 0");
    require(cfg.predictor_noise >= 0.0 && cfg.predictor_noise <= 1.0, "predictor_noise",
            "predictor_noise must lie in [0, 1]");
    require(cfg.prompt_tokens >= 0, "prompt_tokens", "prompt_tokens must be >= 0");
    require(!cfg.memory_cap_tokens || *cfg.memory_cap_tokens >= 1, "memory_cap_tokens",
            "memory_cap_tokens must be >= 1 (or null for no cap)");
    return cfg;
}

nlohmann::json to_json(const SimConfig& cfg) {
    nlohmann::json j;
    j["fps"] = cfg.fps;
    j["tokens_per_frame"] = cfg.tokens_per_frame;
    j["d"] = cfg.d;
    j["N_S"] = cfg.N_S;
    j["N_L"] = cfg.N_L ? nlohmann::json(*cfg.N_L) : nlohmann::json(nullptr);
    j["tau"] = cfg.tau;
    j["mean_step_s"] = cfg.mean_step_s;
    j["step_s_jitter"] = cfg.step_s_jitter;
    j["vocab_size"] = cfg.vocab_size;
    j["seed"] = cfg.seed;
    j["lambda_1"] = cfg.lambda_1;
    j["tokens_per_step"] = cfg.tokens_per_step;
    j["num_classes"] = cfg.num_classes;
    j["heads"] = cfg.heads;
    j["layers"] = cfg.layers;
    j["feature_noise"] = cfg.feature_noise;
    j["predictor_noise"] = cfg.predictor_noise;
    j["prompt_tokens"] = cfg.prompt_tokens;
    j["memory_cap_tokens"] =
        cfg.memory_cap_tokens ? nlohmann::json(*cfg.memory_cap_tokens) : nlohmann::json(nullptr);
    return j;
}

namespace {

template <typename T>
T read_number(const nlohmann::json& value, const std::string& key) {
    if constexpr (std::is_integral_v<T>) {
        if (!value.is_number_integer()) throw ConfigError(key, key + " must be an integer");
        if constexpr (std::is_unsigned_v<T>) {
            if (value.is_number_unsigned() || value.get<std::int64_t>() >= 0) return value.get<T>();
            throw ConfigError(key, key + " must be non-negative");
        }
        return value.get<T>();
    } else {
        if (!value.is_number()) throw ConfigError(key, key + " must be a number");
        return value.get<T>();
    }
}

}  // namespace

SimConfig config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("<root>", "config must be a JSON object");
    SimConfig cfg;
    for (const auto& [key, value] : doc.items()) {
        if (key == "fps") cfg.fps = read_number<double>(value, key);
        else if (key == "tokens_per_frame") cfg.tokens_per_frame = read_number<int>(value, key);
        else if (key == "d") cfg.d = read_number<int>(value, key);
        else if (key == "N_S") cfg.N_S = read_number<int>(value, key);
        else if (key == "N_L") cfg.N_L = value.is_null() ? std::nullopt : std::optional<int>(read_number<int>(value, key));
        else if (key == "tau") cfg.tau = read_number<int>(value, key);
        else if (key == "mean_step_s") cfg.mean_step_s = read_number<double>(value, key);
        else if (key == "step_s_jitter") cfg.step_s_jitter = read_number<double>(value, key);
        else if (key == "vocab_size") cfg.vocab_size = read_number<int>(value, key);
        else if (key == "seed") cfg.seed = read_number<std::uint64_t>(value, key);
        else if (key == "lambda_1") cfg.lambda_1 = read_number<double>(value, key);
        else if (key == "tokens_per_step") cfg.tokens_per_step = read_number<double>(value, key);
        else if (key == "num_classes") cfg.num_classes = read_number<int>(value, key);
        else if (key == "heads") cfg.heads = read_number<int>(value, key);
        else if (key == "layers") cfg.layers = read_number<int>(value, key);
        else if (key == "feature_noise") cfg.feature_noise = read_number<double>(value, key);
        else if (key == "predictor_noise") cfg.predictor_noise = read_number<double>(value, key);
        else if (key == "prompt_tokens") cfg.prompt_tokens = read_number<int>(value, key);
        else if (key == "memory_cap_tokens")
            cfg.memory_cap_tokens =
                value.is_null() ? std::nullopt : std::optional<std::int64_t>(read_number<std::int64_t>(value, key));
        else throw ConfigError(key, "unknown config key '" + key + "'");
    }
    return validate_config(cfg);
}

SimConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open config file '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("<file>", std::string("malformed config JSON: ") + e.what());
    }
    return config_from_json(doc);
}

nlohmann::json to_json(const Token& token) {
    nlohmann::json j;
    j["id"] = token.id;
    j["kind"] = to_string(token.kind);
    j["embedding"] = token.embedding;
    j["frame_index"] = token.frame_index ? nlohmann::json(*token.frame_index) : nlohmann::json(nullptr);
    j["step_id"] = token.step_id ? nlohmann::json(*token.step_id) : nlohmann::json(nullptr);
    j["vocab_id"] = token.vocab_id ? nlohmann::json(*token.vocab_id) : nlohmann::json(nullptr);
    j["entry_position"] = token.entry_position ? nlohmann::json(*token.entry_position) : nlohmann::json(nullptr);
    return j;
}

Token token_from_json(const nlohmann::json& doc) {
    Token t;
    t.id = doc.at("id").get<TokenId>();
    t.kind = token_kind_from_string(doc.at("kind").get<std::string>());
    t.embedding = doc.at("embedding").get<std::vector<double>>();
    auto opt = [&](const char* key, auto& field) {
        using Field = typename std::remove_reference_t<decltype(field)>::value_type;
        if (doc.contains(key) && !doc.at(key).is_null()) field = doc.at(key).get<Field>();
    };
    opt("frame_index", t.frame_index);
    opt("step_id", t.step_id);
    opt("vocab_id", t.vocab_id);
    opt("entry_position", t.entry_position);
    validate_token(t);
    return t;
}

}  // namespace procache
