#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "procache/verbalizer.hpp"

using namespace procache;

namespace {

SimConfig hour_config() {
    SimConfig cfg;
    cfg.fps = 4;
    cfg.tokens_per_frame = 1;
    cfg.mean_step_s = 32;
    cfg.tokens_per_step = 5.7;
    return cfg;
}

std::vector<Prediction> from_ids(const std::vector<std::int64_t>& ids) {
    std::vector<Prediction> out;
    for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({static_cast<std::int64_t>(i), ids[i]});
    return out;
}

// Run-length encoding written independently of group_consecutive.
std::vector<std::pair<std::int64_t, std::size_t>> rle(const std::vector<std::int64_t>& ids) {
    std::vector<std::pair<std::int64_t, std::size_t>> out;
    for (auto id : ids) {
        if (!out.empty() && out.back().first == id)
            ++out.back().second;
        else
            out.push_back({id, 1});
    }
    return out;
}

}  // namespace

TEST_CASE("empty log verbalizes anything") {
    PredictionLog log(8);
    CHECK(should_verbalize(log, 3));
}

TEST_CASE("dedup window counts prediction events") {
    const std::size_t tau = 8;
    PredictionLog near(tau);
    near.push(0, 5);
    for (std::int64_t i = 1; i < static_cast<std::int64_t>(tau) - 1; ++i) near.push(i, 100 + i);
    CHECK_FALSE(should_verbalize(near, 5));

    PredictionLog far(tau);
    far.push(0, 5);
    for (std::int64_t i = 1; i <= static_cast<std::int64_t>(tau); ++i) far.push(i, 100 + i);
    CHECK(should_verbalize(far, 5));
    CHECK(far.size() == tau);
}

TEST_CASE("a zero window keeps nothing") {
    PredictionLog log(0);
    log.push(0, 1);
    CHECK(log.size() == 0);
    CHECK(should_verbalize(log, 1));
}

TEST_CASE("no step is verbalized twice within the window") {
    std::mt19937_64 rng(11);
    const std::size_t tau = 6;
    PredictionLog log(tau);
    std::vector<std::int64_t> verbalized_at(10, -1000);
    for (std::int64_t i = 0; i < 5000; ++i) {
        const auto id = std::uniform_int_distribution<std::int64_t>(0, 9)(rng);
        if (should_verbalize(log, id)) {
            CHECK(i - verbalized_at[id] > static_cast<std::int64_t>(tau));
            verbalized_at[id] = i;
        }
        log.push(i, id);
    }
}

TEST_CASE("group_consecutive collapses runs") {
    const auto recs = group_consecutive(from_ids({1, 1, 2, 2, 2, 1}), 4.0);
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].step_id == 1);
    CHECK(recs[1].step_id == 2);
    CHECK(recs[2].step_id == 1);
    CHECK(recs[1].start_s == doctest::Approx(0.5));
    CHECK(recs[1].end_s == doctest::Approx(1.25));
    CHECK(group_consecutive(from_ids({4, 4, 4, 4}), 4.0).size() == 1);
}

TEST_CASE("group_consecutive rejects unordered frames") {
    std::vector<Prediction> p{{0, 1}, {2, 1}, {1, 1}};
    CHECK_THROWS_AS(group_consecutive(p, 4.0), std::invalid_argument);
    std::vector<Prediction> dup{{0, 1}, {0, 1}};
    CHECK_THROWS_AS(group_consecutive(dup, 4.0), std::invalid_argument);
}

TEST_CASE("group_consecutive matches a run-length oracle and is idempotent") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = std::uniform_int_distribution<int>(1, 80)(rng);
        const int k = std::uniform_int_distribution<int>(1, 5)(rng);
        std::vector<std::int64_t> ids;
        for (int i = 0; i < n; ++i) ids.push_back(std::uniform_int_distribution<std::int64_t>(0, k - 1)(rng));
        const auto recs = group_consecutive(from_ids(ids), 2.0);
        const auto oracle = rle(ids);
        REQUIRE(recs.size() == oracle.size());
        double expected_start = 0.0;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            CHECK(recs[i].step_id == oracle[i].first);
            CHECK(recs[i].start_s == doctest::Approx(expected_start));
            expected_start += static_cast<double>(oracle[i].second) / 2.0;
            CHECK(recs[i].end_s == doctest::Approx(expected_start));
        }
        // Regrouping the run heads gives back the same step sequence.
        std::vector<Prediction> heads;
        for (std::size_t i = 0; i < recs.size(); ++i) heads.push_back({static_cast<std::int64_t>(i), recs[i].step_id});
        const auto again = group_consecutive(heads, 2.0);
        REQUIRE(again.size() == recs.size());
        for (std::size_t i = 0; i < recs.size(); ++i) CHECK(again[i].step_id == recs[i].step_id);
    }
}

TEST_CASE("alternating ids give one record each") {
    std::vector<std::int64_t> ids;
    for (int i = 0; i < 17; ++i) ids.push_back(i % 2);
    CHECK(group_consecutive(from_ids(ids), 1.0).size() == 17);
}

TEST_CASE("one-hour budget") {
    const auto r = budget_report(hour_config(), 3600);
    CHECK(r.visual_tokens == doctest::Approx(14400));
    CHECK(r.steps == doctest::Approx(112.5));
    CHECK(r.verbalized_text_tokens == doctest::Approx(641.25));
    CHECK(r.marker_tokens == doctest::Approx(112.5));
    CHECK(r.reduction_ratio == doctest::Approx(14400 / 641.25));
    CHECK(r.reduction_ratio_with_markers == doctest::Approx(14400 / 753.75));
    const auto j = to_json(r);
    CHECK(j.at("visual_tokens").get<double>() == doctest::Approx(14400));
    CHECK(j.contains("reduction_ratio"));
}

TEST_CASE("128 second budget") {
    const auto r = budget_report(hour_config(), 128);
    CHECK(r.verbalized_text_tokens == doctest::Approx(22.8));
}

TEST_CASE("budget rejects a non-positive horizon") {
    CHECK_THROWS_AS(budget_report(hour_config(), 0), std::invalid_argument);
    CHECK_THROWS_AS(budget_report(hour_config(), -5), std::invalid_argument);
}

TEST_CASE("reduction ratio increases with step length") {
    auto cfg = hour_config();
    double prev = 0.0;
    for (double s = 2; s <= 256; s *= 1.5) {
        cfg.mean_step_s = s;
        cfg.step_s_jitter = 0;
        const double r = budget_report(cfg, 3600).reduction_ratio;
        CHECK(r > prev);
        prev = r;
    }
}

TEST_CASE("verbalize emits a marker then the step's text") {
    Verbalizer v(16, 128, 5.7, 3);
    TokenIdAllocator ids;
    StepRecord step = v.describe(7, 0.0, 32.0);
    step.text_token_count = 5;
    const auto a = v.verbalize(step, ids);
    REQUIRE(a.size() == 6);
    CHECK(a[0].kind == TokenKind::LongTermMarker);
    for (std::size_t i = 1; i < a.size(); ++i) {
        CHECK(a[i].kind == TokenKind::Text);
        CHECK(a[i].step_id == 7);
        CHECK(a[i].embedding.size() == 16);
    }
    const auto b = v.verbalize(step, ids);
    REQUIRE(b.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id != b[i].id);
        CHECK(a[i].embedding == b[i].embedding);
        CHECK(a[i].vocab_id == b[i].vocab_id);
    }
}

TEST_CASE("label lengths average to the configured tokens per step") {
    Verbalizer v(8, 128, 5.7, 1);
    double total = 0;
    const int n = 4000;
    for (int s = 0; s < n; ++s) {
        const int c = v.text_token_count(s);
        CHECK((c == 5 || c == 6));
        total += c;
    }
    CHECK(total / n == doctest::Approx(5.7).epsilon(0.02));
    // One hour at one step per 32 s.
    CHECK(112.5 * total / n == doctest::Approx(630).epsilon(0.1));
}

TEST_CASE("labels are deterministic") {
    Verbalizer a(8, 128, 5.7, 9), b(8, 128, 5.7, 9);
    CHECK(a.label_vocab_ids(4, 6) == b.label_vocab_ids(4, 6));
    CHECK(a.vocab_embedding(17) == b.vocab_embedding(17));
    CHECK(a.label(4) == "step_4");
}
