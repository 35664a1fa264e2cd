#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "procache/interleaved_cache.hpp"
#include "../support/cache_traces.hpp"
#include "../support/token_factory.hpp"

using namespace procache;
using testing::marker;
using testing::prompt;
using testing::text;
using testing::visual;

namespace {

std::vector<TokenId> ids_of(const std::vector<Token>& tokens) {
    std::vector<TokenId> out;
    for (const auto& t : tokens) out.push_back(t.id);
    return out;
}

}  // namespace

TEST_CASE("entry appends at the tail and stamps positions") {
    InterleavedCache cache(64, 5);
    CHECK(cache.live_tokens().empty());
    cache.entry(visual(0, 0));
    CHECK(cache.live_ids() == std::vector<TokenId>{0});
    cache.entry(visual(1, 1));
    cache.entry(text(2, 0));
    CHECK(cache.live_ids() == std::vector<TokenId>{0, 1, 2});
    const auto live = cache.live_tokens();
    CHECK(*live[0].entry_position == 0);
    CHECK(*live[2].entry_position == 2);
}

TEST_CASE("entry never evicts") {
    InterleavedCache cache(64, 5);
    for (TokenId i = 0; i < 65; ++i) cache.entry(visual(i, static_cast<std::int64_t>(i)));
    CHECK(cache.visual_count() == 65);
}

TEST_CASE("entry rejects duplicates and pre-stamped tokens") {
    InterleavedCache cache(4, 1);
    cache.entry(visual(7, 0));
    CHECK_THROWS_AS(cache.entry(visual(7, 1)), std::invalid_argument);
    Token stamped = visual(8, 1);
    stamped.entry_position = 3;
    CHECK_THROWS_AS(cache.entry(stamped), std::invalid_argument);
    Token no_frame = visual(9, 0);
    no_frame.frame_index.reset();
    CHECK_THROWS_AS(cache.entry(no_frame), std::invalid_argument);
}

TEST_CASE("exit_short drops the oldest visual token only") {
    InterleavedCache cache(2, 5);
    cache.entry(visual(0, 0));
    cache.entry(text(1, 0));
    cache.entry(visual(2, 1));
    cache.entry(visual(3, 2));
    const auto evicted = cache.exit_short();
    CHECK(ids_of(evicted) == std::vector<TokenId>{0});
    CHECK(cache.live_ids() == std::vector<TokenId>{1, 2, 3});
}

TEST_CASE("exit_short at capacity is a no-op") {
    InterleavedCache cache(64, 5);
    for (TokenId i = 0; i < 64; ++i) cache.entry(visual(i, static_cast<std::int64_t>(i)));
    CHECK(cache.exit_short().empty());
    CHECK(cache.size() == 64);
}

TEST_CASE("exit_short pops repeatedly until within capacity") {
    InterleavedCache cache(1, 5);
    for (TokenId i = 0; i < 3; ++i) cache.entry(visual(i, static_cast<std::int64_t>(i)));
    CHECK(ids_of(cache.exit_short()) == std::vector<TokenId>{0, 1});
    CHECK(cache.live_ids() == std::vector<TokenId>{2});
}

TEST_CASE("exit_long evicts the oldest marker with its text") {
    InterleavedCache cache(8, 1);
    cache.entry(marker(0, 10));
    cache.entry(text(1, 10));
    cache.entry(text(2, 10));
    cache.entry(visual(3, 5));
    cache.entry(marker(4, 11));
    cache.entry(text(5, 11));
    const auto groups = cache.exit_long();
    REQUIRE(groups.size() == 1);
    CHECK(ids_of(groups[0]) == std::vector<TokenId>{0, 1, 2});
    CHECK(cache.live_ids() == std::vector<TokenId>{3, 4, 5});
    CHECK(cache.text_count() == 1);
}

TEST_CASE("exit_long under capacity and at zero capacity") {
    InterleavedCache five(8, 5);
    for (TokenId s = 0; s < 4; ++s) {
        five.entry(marker(2 * s, static_cast<std::int64_t>(s)));
        five.entry(text(2 * s + 1, static_cast<std::int64_t>(s)));
    }
    CHECK(five.exit_long().empty());
    CHECK(five.long_count() == 4);

    InterleavedCache zero(8, 0);
    zero.entry(marker(0, 1));
    zero.entry(text(1, 1));
    const auto groups = zero.exit_long();
    REQUIRE(groups.size() == 1);
    CHECK(ids_of(groups[0]) == std::vector<TokenId>{0, 1});
    CHECK(zero.empty());
}

TEST_CASE("unbounded long-term capacity never evicts groups") {
    InterleavedCache cache(2, std::nullopt);
    for (TokenId s = 0; s < 50; ++s) {
        cache.entry(marker(2 * s, static_cast<std::int64_t>(s)));
        cache.entry(text(2 * s + 1, static_cast<std::int64_t>(s)));
    }
    CHECK(cache.exit_long().empty());
    CHECK(cache.long_count() == 50);
}

TEST_CASE("a marker without its text is a structural error") {
    InterleavedCache cache(8, 0);
    cache.entry(marker(0, 1));
    cache.entry(visual(1, 0));
    CHECK_THROWS_AS(cache.exit_long(), StructuralError);

    InterleavedCache other_step(8, 0);
    other_step.entry(marker(0, 1));
    other_step.entry(text(1, 2));
    CHECK_THROWS_AS(other_step.exit_long(), StructuralError);
}

TEST_CASE("prompt tokens are pinned") {
    InterleavedCache cache(1, 0);
    cache.entry(prompt(0));
    cache.entry(visual(1, 0));
    cache.entry(visual(2, 1));
    cache.entry(marker(3, 0));
    cache.entry(text(4, 0));
    cache.exit_short();
    cache.exit_long();
    CHECK(cache.live_ids() == std::vector<TokenId>{0, 2});
    CHECK(cache.prompt_count() == 1);
}

TEST_CASE("survivors keep their order and positions after eviction") {
    InterleavedCache cache(2, 1);
    std::vector<Token> log;
    for (TokenId i = 0; i < 6; ++i) {
        if (i % 3 == 2) {
            cache.entry(marker(100 + i, static_cast<std::int64_t>(i)));
            cache.entry(text(200 + i, static_cast<std::int64_t>(i)));
        } else {
            cache.entry(visual(i, static_cast<std::int64_t>(i)));
        }
    }
    const auto before = cache.live_tokens();
    cache.exit_short();
    cache.exit_long();
    const auto after = cache.live_tokens();
    // Replay: survivors are the before-sequence minus evicted ids, same positions.
    std::vector<Token> expected;
    for (const auto& t : before)
        if (cache.contains(t.id)) expected.push_back(t);
    REQUIRE(after.size() == expected.size());
    for (std::size_t i = 0; i < after.size(); ++i) {
        CHECK(after[i].id == expected[i].id);
        CHECK(after[i].entry_position == expected[i].entry_position);
    }
}

TEST_CASE("event log records every call as JSONL-ready objects") {
    InterleavedCache cache(1, 0);
    cache.enable_event_log(true);
    cache.set_time(0.25);
    cache.entry(visual(0, 0));
    cache.entry(visual(1, 1));
    cache.exit_short();
    cache.entry(marker(2, 4));
    cache.entry(text(3, 4));
    cache.exit_long();
    const auto& ev = cache.events();
    REQUIRE(ev.size() == 6);
    const auto j = to_json(ev[2]);
    CHECK(j["op"] == "exit_short");
    CHECK(j["token_ids"] == nlohmann::json::array({0}));
    CHECK(j["kind"] == "visual");
    CHECK(j["t"] == 0.25);
    CHECK(to_json(ev[5])["token_ids"] == nlohmann::json::array({2, 3}));
    CHECK(to_json(ev[3])["kind"] == "long_marker");
    CHECK(cache.take_events().size() == 6);
    CHECK(cache.events().empty());
}

TEST_CASE("copies are independent values") {
    InterleavedCache a(1, 1);
    a.entry(visual(0, 0));
    InterleavedCache b = a;
    b.entry(visual(1, 1));
    b.exit_short();
    CHECK(a.live_ids() == std::vector<TokenId>{0});
    CHECK(b.live_ids() == std::vector<TokenId>{1});
}

TEST_CASE("random traces agree with the list-scan transcription") {
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        const auto res = testing::check_random_cache_trace(seed);
        INFO(res.failure);
        REQUIRE(res.ok);
    }
}
