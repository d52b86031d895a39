#include <catch2/catch_amalgamated.hpp>

#include "ctxdiff/schedule.hpp"

using namespace ctxdiff;

TEST_CASE("linear schedule hits its beta endpoints") {
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 20, 0.00085, 0.012);
    CHECK(s.beta(1) == 0.00085);
    CHECK(s.beta(20) == 0.012);
    // interior point of the endpoint-inclusive interpolation
    CHECK(s.beta(2) == Catch::Approx(0.0014368421052631579).epsilon(1e-14));
}

TEST_CASE("degenerate linear schedule is constant") {
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 2, 0.3, 0.3);
    CHECK(s.beta(1) == 0.3);
    CHECK(s.beta(2) == 0.3);
}

TEST_CASE("schedule construction rejects bad arguments") {
    CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 1, 0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 10, 0.0, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 10, 0.2, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 10, 0.1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(ScheduleKind::cosine, 1, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("schedule invariants hold for linear and cosine") {
    const NoiseSchedule schedules[] = {
        make_schedule(ScheduleKind::linear, 20, 0.00085, 0.012),
        make_schedule(ScheduleKind::linear, 1000, 1e-4, 0.02),
        make_schedule(ScheduleKind::cosine, 100, 0, 0),
        make_schedule(ScheduleKind::cosine, 1000, 0, 0),
    };
    for (const NoiseSchedule& s : schedules) {
        CAPTURE(to_string(s.spec.kind), s.T());
        CHECK(s.alpha_bar(0) == 1.0);
        CHECK(s.k(0) == 0.0);
        CHECK(s.k(s.T()) == 0.0);
        CHECK(s.alpha_bar(s.T()) > 0.0);
        CHECK(s.alpha_bar(s.T()) < 1.0);
        for (int t = 1; t <= s.T(); ++t) {
            CHECK(s.beta(t) > 0.0);
            CHECK(s.beta(t) < 1.0);
            CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
            // product consistency: alpha_bar_t / alpha_bar_{t-1} = alpha_t
            CHECK(std::abs(s.alpha_bar(t) / s.alpha_bar(t - 1) - s.alpha(t)) < 1e-12);
            CHECK(s.k(t) >= 0.0);
            CHECK(s.k(t) <= 0.25);
        }
    }
}

TEST_CASE("cosine schedule clips beta at 0.999") {
    NoiseSchedule s = make_schedule(ScheduleKind::cosine, 1000, 0, 0);
    double max_beta = 0.0;
    for (int t = 1; t <= s.T(); ++t) max_beta = std::max(max_beta, s.beta(t));
    CHECK(max_beta <= 0.999);
    CHECK(max_beta == 0.999);  // the profile's final ratio would exceed the clip
}

TEST_CASE("context gain formula and boundary clamps") {
    // beta = 0.5 everywhere: alpha_bar_2 = 0.25, so k_2 = 0.5 * 0.5 = 0.25
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 3, 0.5, 0.5);
    CHECK(context_gain(s, 0) == 0.0);
    CHECK(context_gain(s, 2) == 0.25);
    CHECK(context_gain(s, 3) == 0.0);  // k_T hard clamp
    CHECK_THROWS_AS(context_gain(s, -1), std::out_of_range);
    CHECK_THROWS_AS(context_gain(s, 4), std::out_of_range);
}

TEST_CASE("gain bound attains 0.25 only when sqrt(alpha_bar) is one half") {
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 200, 1e-3, 0.05);
    for (int t = 1; t < s.T(); ++t) {
        if (s.k(t) == 0.25) {
            CHECK(std::sqrt(s.alpha_bar(t)) == 0.5);
        }
    }
}
