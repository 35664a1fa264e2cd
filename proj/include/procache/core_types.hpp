#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace procache {

class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string field, const std::string& what)
        : std::invalid_argument(what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Raised when cache contents violate an internal structural rule.
class StructuralError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class TokenKind { VisualFrame, Text, LongTermMarker, Prompt };

std::string_view to_string(TokenKind kind);
TokenKind token_kind_from_string(std::string_view name);

using TokenId = std::uint64_t;
using Position = std::uint64_t;

struct Token {
    TokenId id = 0;
    TokenKind kind = TokenKind::Text;
    std::vector<double> embedding;
    std::optional<std::int64_t> frame_index;  // VisualFrame only
    std::optional<std::int64_t> step_id;      // Text / LongTermMarker only
    std::optional<std::int32_t> vocab_id;     // Text only
    // Set by the cache on entry, never changed afterwards.
    std::optional<Position> entry_position;
};

/// Checks the kind/metadata pairing rules of a token.
void validate_token(const Token& token);

/// Hands out strictly increasing token ids.
class TokenIdAllocator {
public:
    TokenId next() noexcept { return next_++; }
    TokenId peek() const noexcept { return next_; }

private:
    TokenId next_ = 0;
};

struct StepRecord {
    std::int64_t step_id = 0;
    std::string label;
    double start_s = 0.0;
    double end_s = 0.0;
    int text_token_count = 1;

    double duration_s() const noexcept { return end_s - start_s; }
};

void validate_step(const StepRecord& step);

/// Center-format box, normalized to the unit square.
struct BBox {
    double cx = 0.5;
    double cy = 0.5;
    double w = 0.0;
    double h = 0.0;

    double x1() const noexcept { return cx - 0.5 * w; }
    double x2() const noexcept { return cx + 0.5 * w; }
    double y1() const noexcept { return cy - 0.5 * h; }
    double y2() const noexcept { return cy + 0.5 * h; }
    double area() const noexcept { return w * h; }

    bool operator==(const BBox&) const = default;
};

bool is_valid(const BBox& box) noexcept;
/// Clips the box to the unit square, keeping center format.
BBox clamp_to_unit(const BBox& box);

struct SimConfig {
    double fps = 4.0;
    int tokens_per_frame = 1;
    int d = 32;
    int N_S = 64;
    std::optional<int> N_L = 5;  // nullopt: unbounded long-term cache
    int tau = 8;
    double mean_step_s = 32.0;
    double step_s_jitter = 8.0;
    int vocab_size = 128;
    std::uint64_t seed = 7;
    double lambda_1 = 2.0;

    // Simulation knobs beyond the core cache parameters.
    double tokens_per_step = 5.7;
    int num_classes = 24;
    int heads = 4;
    int layers = 2;
    double feature_noise = 0.5;
    double predictor_noise = 0.0;
    int prompt_tokens = 4;
    std::optional<std::int64_t> memory_cap_tokens;

    bool operator==(const SimConfig&) const = default;
};

/// Returns the config unchanged when every field is in range; throws ConfigError naming the field otherwise.
SimConfig validate_config(const SimConfig& cfg);

nlohmann::json to_json(const SimConfig& cfg);
/// Strict parse: unknown keys and ill-typed values are ConfigErrors. Missing keys keep their defaults.
SimConfig config_from_json(const nlohmann::json& doc);
SimConfig load_config(const std::string& path);

nlohmann::json to_json(const Token& token);
Token token_from_json(const nlohmann::json& doc);

}  // namespace procache
