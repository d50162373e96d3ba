#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "voxdiff/errors.hpp"
#include "voxdiff/schedule.hpp"

using namespace voxdiff;

TEST_CASE("cosine schedule midpoint value") {
    const Schedule sch = cosine_schedule(250, 0.008);
    // frozen from an independent double-precision evaluation
    CHECK(sch.alpha_bar[125] == doctest::Approx(0.49384359044063775).epsilon(1e-3));
    CHECK(std::abs(sch.alpha_bar[125] - 0.4939) < 1e-3);
}

TEST_CASE("alpha_bar starts at one and decreases strictly") {
    const Schedule sch = cosine_schedule(250, 0.008);
    CHECK(sch.alpha_bar[0] == 1.0);
    for (int t = 1; t <= sch.T; ++t) {
        CHECK(sch.alpha_bar[t] < sch.alpha_bar[t - 1]);
        CHECK(sch.alpha_bar[t] > 0.0);
    }
}

TEST_CASE("beta range and sigma consistency") {
    for (const int T : {10, 250, 1000}) {
        const Schedule sch = cosine_schedule(T, 0.008);
        for (int t = 1; t <= T; ++t) {
            CHECK(sch.beta[t] > 0.0);
            CHECK(sch.beta[t] <= 0.999);
            CHECK(sch.alpha[t] == doctest::Approx(1.0 - sch.beta[t]).epsilon(1e-12));
            CHECK(sch.sigma[t] == doctest::Approx(std::sqrt(sch.beta[t])).epsilon(1e-12));
        }
    }
}

TEST_CASE("alpha_bar equals the running alpha product") {
    const Schedule sch = cosine_schedule(250, 0.008);
    double prod = 1.0;
    for (int t = 1; t <= sch.T; ++t) {
        prod *= sch.alpha[t];
        CHECK(std::abs(prod - sch.alpha_bar[t]) <= 1e-6 * std::abs(sch.alpha_bar[t]));
    }
}

TEST_CASE("single-step alpha_bar drop is bounded") {
    const Schedule sch = cosine_schedule(250, 0.008);
    for (int t = 1; t <= sch.T; ++t) {
        const double drop = sch.alpha_bar[t - 1] - sch.alpha_bar[t];
        CHECK(drop < 3.0 / sch.T + 1e-9);
    }
}

TEST_CASE("validate accepts a well-formed schedule") {
    const ScheduleReport r = validate(cosine_schedule(250, 0.008));
    CHECK(r.ok);
    CHECK(r.first_violation.empty());
}

TEST_CASE("validate names the first violated invariant") {
    Schedule sch = cosine_schedule(50, 0.008);
    sch.beta[10] = 1.5;
    const ScheduleReport r = validate(sch);
    CHECK_FALSE(r.ok);
    CHECK_FALSE(r.first_violation.empty());
}

TEST_CASE("schedule construction rejects bad arguments") {
    CHECK_THROWS_AS(cosine_schedule(0, 0.008), ConfigError);
    CHECK_THROWS_AS(cosine_schedule(-5, 0.008), ConfigError);
    CHECK_THROWS_AS(cosine_schedule(250, -0.1), ConfigError);
}
