#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>

#include "procache/core_types.hpp"
#include "../support/token_factory.hpp"

using namespace procache;

TEST_CASE("validate_config accepts the published defaults") {
    SimConfig cfg;
    cfg.N_S = 64;
    cfg.N_L = 5;
    cfg.fps = 4;
    CHECK(validate_config(cfg) == cfg);
}

TEST_CASE("validate_config names the offending field") {
    SimConfig cfg;
    cfg.N_S = 0;
    try {
        validate_config(cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "N_S");
        CHECK(std::string(e.what()) == "N_S must be ≥ 1");
    }

    SimConfig neg_tau;
    neg_tau.tau = -1;
    CHECK_THROWS_AS(validate_config(neg_tau), ConfigError);

    SimConfig bad_fps;
    bad_fps.fps = 0.0;
    CHECK_THROWS_AS(validate_config(bad_fps), ConfigError);

    SimConfig bad_heads;
    bad_heads.d = 30;
    bad_heads.heads = 4;
    CHECK_THROWS_AS(validate_config(bad_heads), ConfigError);

    SimConfig zero_long;
    zero_long.N_L = 0;
    CHECK_NOTHROW(validate_config(zero_long));
}

TEST_CASE("config JSON is strict about keys") {
    const auto cfg = config_from_json(nlohmann::json{{"N_S", 32}, {"N_L", nullptr}, {"tau", 3}});
    CHECK(cfg.N_S == 32);
    CHECK_FALSE(cfg.N_L.has_value());
    CHECK(cfg.tau == 3);
    CHECK(cfg.fps == 4.0);

    try {
        config_from_json(nlohmann::json{{"N_S", 32}, {"n_s", 1}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "n_s");
    }
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"N_S", "64"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"N_S", 1.5}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"N_S", 0}}), ConfigError);
}

TEST_CASE("config survives a JSON round trip") {
    SimConfig cfg;
    cfg.N_L = std::nullopt;
    cfg.memory_cap_tokens = 40000;
    cfg.lambda_1 = 0.25;
    cfg.seed = 123456789012345ULL;
    CHECK(config_from_json(to_json(cfg)) == cfg);
}

TEST_CASE("load_config reports unreadable and malformed files") {
    CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), ConfigError);
    const std::string path = "core_types_bad.json";
    {
        std::ofstream out(path);
        out << "{ \"N_S\": ";
    }
    CHECK_THROWS_AS(load_config(path), ConfigError);
}

TEST_CASE("token metadata must match its kind") {
    Token v = testing::visual(1, 0);
    CHECK_NOTHROW(validate_token(v));
    v.frame_index.reset();
    CHECK_THROWS_AS(validate_token(v), std::invalid_argument);

    Token t = testing::text(2, 3);
    t.step_id.reset();
    CHECK_THROWS_AS(validate_token(t), std::invalid_argument);
    CHECK_NOTHROW(validate_token(testing::prompt(3)));
}

TEST_CASE("token serialization round-trips random tokens") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 200; ++i) {
        Token t;
        switch (i % 4) {
            case 0: t = testing::visual(static_cast<TokenId>(i), i * 3); break;
            case 1: t = testing::marker(static_cast<TokenId>(i), i); break;
            case 2: t = testing::text(static_cast<TokenId>(i), i); t.vocab_id = i % 17; break;
            default: t = testing::prompt(static_cast<TokenId>(i)); break;
        }
        t.embedding = testing::random_embedding(rng, 1 + i % 9);
        if (i % 3 == 0) t.entry_position = static_cast<Position>(i * 7);
        const Token back = token_from_json(nlohmann::json::parse(to_json(t).dump()));
        CHECK(back.id == t.id);
        CHECK(back.kind == t.kind);
        CHECK(back.embedding == t.embedding);
        CHECK(back.frame_index == t.frame_index);
        CHECK(back.step_id == t.step_id);
        CHECK(back.vocab_id == t.vocab_id);
        CHECK(back.entry_position == t.entry_position);
    }
}

TEST_CASE("step records need positive span and token count") {
    CHECK_NOTHROW(validate_step(StepRecord{1, "a", 0.0, 32.0, 6}));
    CHECK_THROWS_AS(validate_step(StepRecord{1, "a", 5.0, 5.0, 6}), std::invalid_argument);
    CHECK_THROWS_AS(validate_step(StepRecord{1, "a", 0.0, 1.0, 0}), std::invalid_argument);
}

TEST_CASE("boxes clamp into the unit square") {
    const BBox b{0.9, 0.1, 0.4, 0.4};
    const BBox c = clamp_to_unit(b);
    CHECK(c.x1() == doctest::Approx(0.7));
    CHECK(c.x2() == doctest::Approx(1.0));
    CHECK(c.y1() == doctest::Approx(0.0));
    CHECK(c.y2() == doctest::Approx(0.3));
    CHECK(is_valid(c));
    CHECK_FALSE(is_valid(BBox{0.5, 0.5, 0.0, 0.2}));
}

TEST_CASE("id allocator is strictly increasing") {
    TokenIdAllocator ids;
    TokenId prev = ids.next();
    for (int i = 0; i < 1000; ++i) {
        const TokenId cur = ids.next();
        CHECK(cur > prev);
        prev = cur;
    }
}
